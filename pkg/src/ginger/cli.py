"""Command-line entry point.

    ginger run <config> [--seed N] [--jobs J] [--out DIR]
    ginger verify [--filter NAME]
    ginger bench --dims 1e3,1e4,1e5 --tau 8 --reps 20 [--seed N] [--out DIR]

Exit codes: 0 success, 1 usage error, 2 verification failure,
3 numerical abort.
"""

from __future__ import annotations

import argparse
import os
import sys

from .rank_one_update import NumericalError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VERIFY_FAILED = 2
EXIT_NUMERICAL = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="ginger", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("config", help="path to a key = value config file")
    run.add_argument("--seed", type=int, default=None, help="override the seed list")
    run.add_argument("--jobs", type=int, default=1, help="parallel grid runs")
    run.add_argument("--out", default=None, help="override output_dir (beats GINGER_OUT)")

    verify = sub.add_parser("verify", help="run the oracle verification suite")
    verify.add_argument("--filter", default=None, help="substring filter on check names")

    bench = sub.add_parser("bench", help="benchmark step-time scaling")
    bench.add_argument("--dims", required=True, help="comma list of dimensions, e.g. 1e3,1e4")
    bench.add_argument("--tau", type=int, default=8)
    bench.add_argument("--reps", type=int, default=20)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--out", default=None, help="also write the table as CSV here")
    return parser


def _cmd_run(args) -> int:
    from .harness import parse_config_file, run_experiment

    try:
        config = parse_config_file(args.config)
        if args.seed is not None:
            config.seeds = [args.seed]
        if args.jobs < 1:
            raise ValueError(f"--jobs must be >= 1, got {args.jobs}")
    except (OSError, ValueError) as exc:
        print(f"ginger run: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return run_experiment(config, jobs=args.jobs, out_override=args.out)


def _cmd_verify(args) -> int:
    from .verify import run_checks

    results = run_checks(args.filter)
    if not results:
        print(f"ginger verify: no check matches filter {args.filter!r}", file=sys.stderr)
        return EXIT_USAGE
    failures = 0
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        line = f"{status} {res.name}: residual={res.residual:.3e} tol={res.tolerance:.3e}"
        if res.detail:
            line += f" ({res.detail})"
        print(line)
        failures += not res.passed
    print(f"{len(results) - failures}/{len(results)} checks passed")
    return EXIT_VERIFY_FAILED if failures else EXIT_OK


def _cmd_bench(args) -> int:
    from .bench import bench_scaling, format_table

    try:
        dims = [int(float(part)) for part in args.dims.split(",") if part.strip()]
        if not dims:
            raise ValueError("empty --dims list")
        rows = bench_scaling(dims, tau=args.tau, reps=args.reps, seed=args.seed)
    except ValueError as exc:
        print(f"ginger bench: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(format_table(rows))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "bench.csv")
        with open(path, "w") as fh:
            fh.write("dim,tau,median_step_ns,ratio_vs_prev,flops_est\n")
            for row in rows:
                ratio = "" if row.ratio_vs_prev is None else f"{row.ratio_vs_prev:.6f}"
                fh.write(
                    f"{row.dim},{row.tau},{row.median_step_ns:.0f},{ratio},{row.flops_est}\n"
                )
        print(f"wrote {path}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "verify":
            return _cmd_verify(args)
        return _cmd_bench(args)
    except NumericalError as exc:
        print(f"ginger: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())

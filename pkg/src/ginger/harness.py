"""Experiment harness: config files, training runs, metrics persistence.

Config files are plain text, one `key = value` per line, with dotted keys
forming a tree ("task.dim = 20", "optimizer.kind = ginger").  Comma lists on
optimizer keys sweep a cartesian grid, and "optimizer.<kind>.<field>" pins a
field for one kind only.  See configs/example.cfg for the full grammar.

Each (grid point, seed) run writes one JSON Lines metrics file plus a shared
CSV summary.  Runs are deterministic given the config; with record_timing
off, the metrics files are byte-identical across repeats (step timings are
the one field that cannot be reproducible).
"""

from __future__ import annotations

import csv
import itertools
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .lowrank_ggn import semi_orthogonality_residual
from .optimizers import KINDS, OptimizerConfig, build_optimizer, eta_at
from .tasks import TaskInstance, make_synthetic

__all__ = [
    "ExperimentConfig",
    "RECORD_KEYS",
    "TaskSpec",
    "parse_config_file",
    "run_experiment",
    "summarize_records",
]

# Every metrics line is a flat JSON object with exactly these keys.
RECORD_KEYS = (
    "event",
    "step",
    "train_loss",
    "grad_norm",
    "step_time_ns",
    "orth_residual",
    "max_k_gamma",
    "optimizer",
    "seed",
    "reason",
)

SUMMARY_COLUMNS = (
    "run",
    "optimizer",
    "seed",
    "steps_run",
    "min_train_loss",
    "final_grad_norm",
    "mean_step_time_ns",
    "aborted",
)


@dataclass
class TaskSpec:
    arch: str = "softmax_linear"
    n: int = 512
    dim: int = 8
    classes: int = 3
    blob_spread: float = 0.5
    hidden: int = 16
    data_seed: int = 0


@dataclass
class ExperimentConfig:
    task: TaskSpec = field(default_factory=TaskSpec)
    optimizers: list[OptimizerConfig] = field(default_factory=list)
    steps: int = 100
    batch_size: int = 32
    log_every: int = 10
    seeds: list[int] = field(default_factory=lambda: [0])
    output_dir: str = "runs"
    record_timing: bool = True

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError(f"steps must be nonnegative, got {self.steps}")
        if self.batch_size <= 0:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if self.log_every <= 0:
            raise ValueError(f"log_every must be positive, got {self.log_every}")
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if not self.optimizers:
            raise ValueError("optimizer grid is empty")


# --- config file parsing -----------------------------------------------------


def _parse_scalar(text: str):
    text = text.strip()
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def _parse_value(text: str):
    if "," in text:
        return [_parse_scalar(part) for part in text.split(",") if part.strip()]
    return _parse_scalar(text)


def parse_config_text(text: str) -> ExperimentConfig:
    entries: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        entries[key.strip()] = _parse_value(value)
    return build_experiment_config(entries)


def parse_config_file(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config_text(fh.read())


def _as_list(value) -> list:
    return value if isinstance(value, list) else [value]


def build_experiment_config(entries: dict) -> ExperimentConfig:
    entries = dict(entries)
    task_fields = {f.name for f in fields(TaskSpec)}
    opt_fields = {f.name for f in fields(OptimizerConfig)}

    task_kwargs = {}
    grid_axes: dict[str, list] = {}
    overrides: dict[str, dict] = {}
    top = {}
    for key, value in entries.items():
        parts = key.split(".")
        if parts[0] == "task":
            if len(parts) != 2 or parts[1] not in task_fields:
                raise ValueError(f"unknown task key {key!r}")
            task_kwargs[parts[1]] = value
        elif parts[0] == "optimizer":
            if len(parts) == 2 and parts[1] in opt_fields:
                grid_axes[parts[1]] = _as_list(value)
            elif len(parts) == 3 and parts[1] in KINDS and parts[2] in opt_fields:
                overrides.setdefault(parts[1], {})[parts[2]] = value
            else:
                raise ValueError(f"unknown optimizer key {key!r}")
        elif len(parts) == 1:
            top[key] = value
        else:
            raise ValueError(f"unknown config key {key!r}")

    if "kind" not in grid_axes:
        raise ValueError("config must set optimizer.kind")
    names = sorted(grid_axes)
    optimizers = []
    for combo in itertools.product(*(grid_axes[name] for name in names)):
        kwargs = dict(zip(names, combo))
        kwargs.update(overrides.get(kwargs["kind"], {}))
        optimizers.append(OptimizerConfig(**kwargs))

    seeds = [int(s) for s in _as_list(top.pop("seeds", [0]))]
    known = {"steps", "batch_size", "log_every", "output_dir", "record_timing"}
    unknown = set(top) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return ExperimentConfig(
        task=TaskSpec(**task_kwargs),
        optimizers=optimizers,
        seeds=seeds,
        **top,
    )


# --- running -----------------------------------------------------------------


def _resolve_output_dir(config: ExperimentConfig, out_override: str | None) -> str:
    if out_override:
        return out_override
    return os.environ.get("GINGER_OUT") or config.output_dir


def _build_task(spec: TaskSpec, seed: int) -> TaskInstance:
    dataset = make_synthetic(
        n=spec.n,
        dim=spec.dim,
        classes=spec.classes,
        blob_spread=spec.blob_spread,
        seed=spec.data_seed,
    )
    return TaskInstance(
        dataset,
        arch=spec.arch,
        hidden=spec.hidden,
        param_seed=seed,
        batch_seed=seed + 1,
    )


def _make_record(**kwargs) -> dict:
    record = dict.fromkeys(RECORD_KEYS)
    record.update(kwargs)
    return record


def _json_safe(value):
    if value is None:
        return None
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def _dump_record(record: dict) -> str:
    return json.dumps(
        {k: _json_safe(record[k]) for k in RECORD_KEYS},
        sort_keys=True,
        separators=(",", ":"),
        allow_nan=False,
    )


def run_single(
    config: ExperimentConfig, opt_config: OptimizerConfig, seed: int, run_id: str
) -> tuple[list[dict], dict]:
    """Train one (optimizer, seed) cell; returns (records, summary row)."""
    task = _build_task(config.task, seed)
    opt = build_optimizer(replace(opt_config, seed=seed), task.num_params)
    fisher_rng = np.random.default_rng([seed, 0xD17])
    params = task.params

    records: list[dict] = []
    steps_run = 0

    for t in range(config.steps):
        t0 = time.perf_counter_ns()
        x, y = task.sample_batch(config.batch_size)
        loss, grad = task.loss_and_grad(x, y, params)
        if not np.isfinite(loss):
            records.append(
                _make_record(
                    event="abort",
                    step=t,
                    reason="non-finite loss",
                    optimizer=opt.kind,
                    seed=seed,
                )
            )
            break
        d_t = task.fisher_direction(x, fisher_rng, params=params)
        params = opt.step(params, grad, d_t, eta_at(opt_config, t))
        elapsed = time.perf_counter_ns() - t0

        steps_run += 1
        if t % config.log_every == 0 or t == config.steps - 1:
            orth = max_k_gamma = None
            if opt.kind == "ginger":
                orth = semi_orthogonality_residual(opt.factors)
                kg = opt.factors.eigvals / (opt.factors.gamma + opt.factors.eigvals)
                max_k_gamma = float(kg.max(initial=0.0))
            records.append(
                _make_record(
                    event="metric",
                    step=t,
                    train_loss=loss,
                    grad_norm=float(np.linalg.norm(grad)),
                    step_time_ns=elapsed if config.record_timing else 0,
                    orth_residual=orth,
                    max_k_gamma=max_k_gamma,
                    optimizer=opt.kind,
                    seed=seed,
                )
            )

    summary = {"run": run_id, "optimizer": opt.kind, "seed": seed, "steps_run": steps_run}
    summary.update(summarize_records(records))
    return records, summary


def _run_cell(args):
    config, opt_config, seed, run_id = args
    return run_id, run_single(config, opt_config, seed, run_id)


def run_experiment(
    config: ExperimentConfig, jobs: int = 1, out_override: str | None = None
) -> int:
    """Run the whole grid; returns 0 on success, 3 if any run aborted."""
    out_dir = _resolve_output_dir(config, out_override)
    os.makedirs(out_dir, exist_ok=True)

    cells = []
    for idx, opt_config in enumerate(config.optimizers):
        for seed in config.seeds:
            run_id = f"run{idx:03d}_{opt_config.kind}_seed{seed}"
            cells.append((config, opt_config, seed, run_id))

    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = dict(pool.map(_run_cell, cells))
    else:
        results = dict(map(_run_cell, cells))

    summaries = []
    exit_code = 0
    for _, _, _, run_id in cells:
        records, summary = results[run_id]
        with open(os.path.join(out_dir, run_id + ".jsonl"), "w") as fh:
            for record in records:
                fh.write(_dump_record(record) + "\n")
        summaries.append(summary)
        if summary["aborted"]:
            exit_code = 3

    with open(os.path.join(out_dir, "summary.csv"), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        writer.writeheader()
        for summary in summaries:
            writer.writerow({k: ("" if v is None else v) for k, v in summary.items()})
    return exit_code


def summarize_records(records: list[dict]) -> dict:
    """Summary quantities as a pure function of the JSONL records, so the CSV
    is independently re-derivable from the metrics files."""
    metric = [r for r in records if r.get("event") == "metric"]
    losses = [r["train_loss"] for r in metric if r["train_loss"] is not None]
    times = [r["step_time_ns"] for r in metric if r["step_time_ns"] is not None]
    return {
        "min_train_loss": min(losses) if losses else None,
        "final_grad_norm": metric[-1]["grad_norm"] if metric else None,
        "mean_step_time_ns": sum(times) // len(times) if times else None,
        "aborted": any(r.get("event") == "abort" for r in records),
    }

"""Step-time scaling benchmark for the factored preconditioner.

One benchmark step = one state update plus one direction query on fresh
random vectors, which is exactly the per-iteration preconditioner cost in
training.  The analytic flop estimate per step is

    2*d*tau^2 + 12*d*tau + 9*tau^3

(basis rotation, the Woodbury/residual matrix-vector products, and the small
eigendecomposition); the dominant term is O(d*tau^2), linear in d at fixed
rank.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .lowrank_ggn import direction, make_factors, update

__all__ = ["BenchRow", "bench_scaling", "bench_step_time", "flop_estimate"]


def flop_estimate(dim: int, tau: int) -> int:
    return 2 * dim * tau * tau + 12 * dim * tau + 9 * tau**3


def bench_step_time(dim: int, tau: int, reps: int, seed: int = 0) -> float:
    """Median wall-clock nanoseconds per update+query step.

    Update vectors are normalized to unit length: step time is independent
    of the vector scale, and unit vectors keep the spectral state in its
    well-conditioned regime over arbitrarily many repetitions (raw
    standard-normal vectors have squared norm ~dim, which for large dim
    parks the eigenvalue map at the edge of its numerical range).
    """
    if reps < 1:
        raise ValueError(f"reps must be >= 1, got {reps}")
    rng = np.random.default_rng(seed)
    state = make_factors(dim, tau, gamma=1e-2, alpha=0.99, seed=seed)
    # warm up allocators and caches
    state = update(state, _unit(rng.standard_normal(dim)))
    direction(state, rng.standard_normal(dim))

    samples = []
    for _ in range(reps):
        d_t = _unit(rng.standard_normal(dim))
        g = rng.standard_normal(dim)
        t0 = time.perf_counter_ns()
        state = update(state, d_t)
        direction(state, g)
        samples.append(time.perf_counter_ns() - t0)
    return float(np.median(samples))


def _unit(vec: np.ndarray) -> np.ndarray:
    return vec / np.linalg.norm(vec)


@dataclass
class BenchRow:
    dim: int
    tau: int
    median_step_ns: float
    ratio_vs_prev: float | None
    flops_est: int


def bench_scaling(dims: list[int], tau: int, reps: int, seed: int = 0) -> list[BenchRow]:
    """Median step time per dimension, with the ratio against the previous row."""
    rows: list[BenchRow] = []
    prev = None
    for dim in dims:
        if tau >= dim:
            raise ValueError(f"tau must be below dim, got tau={tau}, dim={dim}")
        median = bench_step_time(dim, tau, reps, seed=seed)
        rows.append(
            BenchRow(
                dim=dim,
                tau=tau,
                median_step_ns=median,
                ratio_vs_prev=(median / prev) if prev else None,
                flops_est=flop_estimate(dim, tau),
            )
        )
        prev = median
    return rows


def format_table(rows: list[BenchRow]) -> str:
    lines = [f"{'dim':>10} {'tau':>5} {'median_ns':>14} {'ratio':>8} {'flops_est':>14}"]
    for row in rows:
        ratio = f"{row.ratio_vs_prev:.2f}" if row.ratio_vs_prev else "-"
        lines.append(
            f"{row.dim:>10} {row.tau:>5} {row.median_step_ns:>14.0f} "
            f"{ratio:>8} {row.flops_est:>14}"
        )
    return "\n".join(lines)

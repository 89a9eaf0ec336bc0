"""Brute-force dense references for everything the fast path approximates.

Every routine here is deliberately O(d^2)-O(d^3) and written for clarity,
not speed.  The oracle never touches the factored code paths, so agreement
between the two is meaningful; it is used only by tests and the
verification suite, never in training.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .rank_one_update import EigenPair, _canonicalize_columns

__all__ = [
    "DenseGgn",
    "TruncationRecursion",
    "best_rank_tau",
    "dense_inverse_direction",
    "ema_update_dense",
    "make_dense",
    "sherman_morrison_target",
]

DENSE_GUARD_DIM = 4096


@dataclass
class DenseGgn:
    """Exact exponential moving average of outer products, kept densely.

    ema holds only the undamped part (initialized to zero); the damping
    gamma*I is carried separately so oracle and fast path represent the same
    object.
    """

    gamma: float
    alpha: float
    ema: np.ndarray
    step: int = 0


def make_dense(dim: int, gamma: float, alpha: float) -> DenseGgn:
    if dim > DENSE_GUARD_DIM:
        raise ValueError(f"dense oracle guard: dim {dim} > {DENSE_GUARD_DIM}")
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return DenseGgn(gamma=float(gamma), alpha=float(alpha), ema=np.zeros((dim, dim)))


def ema_update_dense(oracle: DenseGgn, d_t: np.ndarray) -> DenseGgn:
    """ema <- alpha * ema + (1 - alpha) * d_t d_t^T."""
    d_t = np.asarray(d_t, dtype=np.float64)
    if not np.all(np.isfinite(d_t)):
        raise ValueError("update direction contains non-finite values")
    ema = oracle.alpha * oracle.ema + (1.0 - oracle.alpha) * np.outer(d_t, d_t)
    return replace(oracle, ema=ema, step=oracle.step + 1)


def dense_inverse_direction(oracle: DenseGgn, g: np.ndarray) -> np.ndarray:
    """(gamma*I + ema)^{-1} g by dense factorization."""
    dim = oracle.ema.shape[0]
    if dim > DENSE_GUARD_DIM:
        raise ValueError(f"dense oracle guard: dim {dim} > {DENSE_GUARD_DIM}")
    return np.linalg.solve(oracle.gamma * np.eye(dim) + oracle.ema, g)


def best_rank_tau(mat: np.ndarray, tau: int) -> EigenPair:
    """Top-tau eigenpairs of a symmetric PSD matrix, descending.

    This is the optimal rank-tau approximation in both spectral and
    Frobenius norm.
    """
    mat = np.asarray(mat, dtype=np.float64)
    dim = mat.shape[0]
    if not 1 <= tau < dim:
        raise ValueError(f"tau must satisfy 1 <= tau < dim, got {tau} vs {dim}")
    w, v = np.linalg.eigh(0.5 * (mat + mat.T))
    order = np.argsort(w)[::-1][:tau]
    return EigenPair(
        basis=_canonicalize_columns(v[:, order]),
        diag=np.maximum(w[order], 0.0),
    )


def sherman_morrison_target(
    basis: np.ndarray,
    k_diag: np.ndarray,
    h: np.ndarray,
    beta: float,
    alpha: float,
) -> np.ndarray:
    """Densify the inverse-correction matrix U (k/alpha) U^T + beta h h^T.

    This is the exact matrix whose truncated eigendecomposition the fast
    update must match; built by plain dense arithmetic.
    """
    h = np.asarray(h, dtype=np.float64)
    target = beta * np.outer(h, h)
    if basis.size:
        target = target + (basis * (np.asarray(k_diag) / alpha)) @ basis.T
    return target


class TruncationRecursion:
    """Dense mirror of the fast update: exact inverse, full eigendecomposition,
    rank cut, repeat.

    Each step inverts the damped moving average exactly, eigendecomposes the
    resulting correction matrix, keeps the top-tau eigenpairs, and maps them
    back to operator eigenvalues.  The fast path must track this recursion
    step for step; the gap between this recursion and the untruncated EMA is
    a property of the algorithm, not an error.
    """

    def __init__(self, dim: int, rank: int, gamma: float, alpha: float):
        if dim > DENSE_GUARD_DIM:
            raise ValueError(f"dense oracle guard: dim {dim} > {DENSE_GUARD_DIM}")
        if not 1 <= rank < dim:
            raise ValueError(f"rank must satisfy 1 <= rank < dim, got {rank} vs {dim}")
        self.dim = dim
        self.rank = rank
        self.gamma = float(gamma)
        self.alpha = float(alpha)
        self.correction = np.zeros((dim, dim))  # the low-rank part of the operator
        self.step = 0

    def update(self, d_t: np.ndarray) -> None:
        gamma, alpha = self.gamma, self.alpha
        eye = np.eye(self.dim)
        target = gamma * eye + alpha * self.correction + (1.0 - alpha) * np.outer(d_t, d_t)
        inv_correction = eye / gamma - np.linalg.inv(target)
        w, v = np.linalg.eigh(0.5 * (inv_correction + inv_correction.T))
        order = np.argsort(w)[::-1][: self.rank]
        k = np.clip(w[order], 0.0, (1.0 - 1e-12) / gamma)
        sigma = gamma * gamma * k / (1.0 - gamma * k)
        top = v[:, order]
        self.correction = (top * sigma) @ top.T
        self.step += 1

    def dense_matrix(self) -> np.ndarray:
        """The full damped operator gamma*I + correction."""
        return self.gamma * np.eye(self.dim) + self.correction

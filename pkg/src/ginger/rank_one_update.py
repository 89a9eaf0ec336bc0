"""Fast symmetric rank-one eigendecomposition updates.

Positive semi-definite matrices are kept in factored form B = U diag(w) U^T
with a tall semi-orthogonal U.  Adding a rank-one term v v^T only perturbs
the spectrum inside span(U) plus one new direction, so the updated
eigendecomposition is recovered from a small (rank+1) x (rank+1) core
matrix.  Cost is O(d*rank^2 + rank^3) time and O(d*rank) space; no d x d
matrix is ever formed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "EigenPair",
    "NumericalError",
    "orthonormal_residual",
    "r1u",
    "small_eigh",
]

# Residual norms at or below RESIDUAL_RTOL * max(1, |v|) mean v is treated as
# already lying in span(U); dividing by a smaller residual would destroy the
# orthogonality of the appended column.
RESIDUAL_RTOL = 1e-12

# Eigenvalues of the core in [-PSD_DUST_RTOL * |C|_2, 0) are rounding dust and
# clamped to zero; anything below that window means the input was not PSD.
PSD_DUST_RTOL = 1e-10

# Adjacent eigenvalues closer than this at the truncation boundary count as a
# tie and are broken deterministically.
TIE_ATOL = 1e-12


class NumericalError(RuntimeError):
    """A numerical routine failed or an arithmetic-domain bound was violated."""


@dataclass
class EigenPair:
    """Eigendecomposition of a PSD matrix: basis @ diag(diag) @ basis.T.

    basis has orthonormal columns; diag is nonnegative and sorted descending.
    """

    basis: np.ndarray
    diag: np.ndarray

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    @property
    def rank(self) -> int:
        return self.basis.shape[1]


def _canonicalize_columns(mat: np.ndarray) -> np.ndarray:
    """Flip column signs in place so each column's largest-magnitude entry is
    positive.  Column-wise to keep temporaries one vector long."""
    for j in range(mat.shape[1]):
        col = mat[:, j]
        if col[np.abs(col).argmax()] < 0:
            np.negative(col, out=col)
    return mat


def small_eigh(mat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Full symmetric eigendecomposition of a small dense matrix.

    Returns (V, w) with eigenvalues w sorted descending, V's columns the
    matching eigenvectors with canonical signs.  Raises ValueError if the
    input is asymmetric beyond rounding.
    """
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {mat.shape}")
    scale = max(1.0, float(np.linalg.norm(mat)))
    asym = float(np.linalg.norm(mat - mat.T))
    if asym > 1e-10 * scale:
        raise ValueError(f"matrix is asymmetric: |C - C.T| = {asym:.3e}")
    sym = 0.5 * (mat + mat.T)
    try:
        w, v = np.linalg.eigh(sym)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise NumericalError(f"small eigendecomposition failed: {exc}") from exc
    return _canonicalize_columns(v[:, ::-1]), w[::-1]


def orthonormal_residual(
    basis: np.ndarray, h: np.ndarray
) -> tuple[np.ndarray | None, float]:
    """Split h into its span(basis) part and a unit residual direction.

    Returns (p, r) with r = |h - basis basis^T h|.  When r is above the
    degeneracy threshold, p is the unit residual with basis^T p = 0; when h
    lies in span(basis) up to rounding, p is None.  A second projection pass
    keeps p orthogonal even when the residual is tiny relative to |h|.
    """
    h = np.asarray(h, dtype=np.float64)
    if not np.all(np.isfinite(h)):
        raise ValueError("residual input vector contains non-finite values")
    if h.shape != (basis.shape[0],):
        raise ValueError(f"vector length {h.shape} does not match basis rows {basis.shape[0]}")
    z = basis @ (basis.T @ h)
    np.subtract(h, z, out=z)
    z -= basis @ (basis.T @ z)
    r = float(np.linalg.norm(z))
    if r <= RESIDUAL_RTOL * max(1.0, float(np.linalg.norm(h))):
        return None, r
    return z / r, r


def r1u(pair: EigenPair, v: np.ndarray, target_rank: int | None = None) -> EigenPair:
    """Truncated eigendecomposition of basis diag(w) basis^T + v v^T.

    The update is exact before truncation: the extended core
    [[diag(w) + c c^T, r c], [r c^T, r^2]] with c = basis^T v holds the whole
    spectrum change, and rotating (basis | p) by its eigenvectors restores
    eigen-form.  The smallest eigenpair is then dropped to return to
    target_rank (defaults to the input rank), which is the best rank-limited
    approximation of the updated matrix.
    """
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("rank-one update vector contains non-finite values")
    tau = pair.rank
    if v.shape != (pair.dim,):
        raise ValueError(f"vector length {v.shape} does not match basis rows {pair.dim}")
    if target_rank is None:
        target_rank = tau
    if not 1 <= target_rank <= tau:
        raise ValueError(f"target rank {target_rank} must be in [1, {tau}]")

    coeffs = pair.basis.T @ v
    p, resid = orthonormal_residual(pair.basis, v)

    if p is None:
        core = np.diag(pair.diag) + np.outer(coeffs, coeffs)
        rot, eigvals = small_eigh(core)
        extended = pair.basis @ rot
        appended_wt = None
    else:
        core = np.empty((tau + 1, tau + 1))
        core[:tau, :tau] = np.diag(pair.diag) + np.outer(coeffs, coeffs)
        core[:tau, tau] = resid * coeffs
        core[tau, :tau] = resid * coeffs
        core[tau, tau] = resid * resid
        rot, eigvals = small_eigh(core)
        appended_wt = np.abs(rot[tau])
        # one gemm on the stacked (basis | p) block instead of gemm + outer
        stacked = np.empty((pair.dim, tau + 1))
        stacked[:, :tau] = pair.basis
        stacked[:, tau] = p
        extended = stacked @ rot

    if eigvals.size > target_rank and appended_wt is not None:
        # Tie at the truncation boundary: keep the eigenvector that overlaps
        # the appended direction least, for deterministic truncation.
        keep, drop = target_rank - 1, target_rank
        if abs(eigvals[keep] - eigvals[drop]) <= TIE_ATOL and appended_wt[keep] > appended_wt[drop]:
            eigvals[[keep, drop]] = eigvals[[drop, keep]]
            extended[:, [keep, drop]] = extended[:, [drop, keep]]

    core_scale = float(np.abs(eigvals).max(initial=0.0))
    lowest = float(eigvals.min(initial=0.0))
    if lowest < -PSD_DUST_RTOL * core_scale:
        raise NumericalError(
            f"updated matrix has negative eigenvalue {lowest:.3e}; input was not PSD"
        )
    eigvals = np.maximum(eigvals, 0.0)

    basis = np.ascontiguousarray(extended[:, :target_rank])
    _canonicalize_columns(basis)
    return EigenPair(basis=basis, diag=eigvals[:target_rank].copy())

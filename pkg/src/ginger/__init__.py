"""Ginger: low-rank eigendecomposition of the inverse damped Gauss-Newton
matrix, kept up to date online, with baseline optimizers, a dense
verification oracle, and an experiment harness."""

from .lowrank_ggn import (
    GgnFactors,
    direction,
    k_from_sigma,
    load_factors,
    make_factors,
    reconstruct_dense,
    save_factors,
    sigma_from_k,
    update,
)
from .optimizers import OptimizerConfig, build_optimizer, eta_at
from .rank_one_update import EigenPair, NumericalError, orthonormal_residual, r1u, small_eigh
from .tasks import SyntheticDataset, TaskInstance, load_dataset, make_synthetic, save_dataset

__all__ = [
    "EigenPair",
    "GgnFactors",
    "NumericalError",
    "OptimizerConfig",
    "SyntheticDataset",
    "TaskInstance",
    "build_optimizer",
    "direction",
    "eta_at",
    "k_from_sigma",
    "load_dataset",
    "load_factors",
    "make_factors",
    "make_synthetic",
    "orthonormal_residual",
    "r1u",
    "reconstruct_dense",
    "save_dataset",
    "save_factors",
    "sigma_from_k",
    "small_eigh",
    "update",
]

__version__ = "0.1.0"

"""Uniform optimizer interface: Ginger, heavy-ball momentum, Adam, and QNG.

Every optimizer exposes step(params, grad, d_t, eta) -> new params, where
grad is the loss gradient and d_t the model-sampled score direction; the
first-order baselines simply ignore d_t.  Keeping both vectors in the
signature is deliberate: conflating them silently changes the curvature
estimate the second-order methods build.

Convergence-rate constants (gradient Lipschitz constant, gradient and
score-norm bounds) appear only in the descent tests; they have no runtime
representation.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import asdict, dataclass, field

import numpy as np

from .lowrank_ggn import GgnFactors, direction, make_factors, update

__all__ = [
    "AdamOptimizer",
    "GingerOptimizer",
    "MomentumOptimizer",
    "OptimizerConfig",
    "QngOptimizer",
    "QngState",
    "build_optimizer",
    "eta_at",
    "load_optimizer",
    "qng_direction",
    "qng_update",
    "save_optimizer",
]

KINDS = ("ginger", "momentum", "adam", "qng")
SCHEDULES = ("constant", "inverse_sqrt", "cosine")

_CHECKPOINT_FORMAT = "ginger-optimizer-checkpoint"
_CHECKPOINT_VERSION = 1


@dataclass
class OptimizerConfig:
    """Hyperparameters shared across optimizer kinds.

    alpha is the moving-average decay (second-moment decay for adam); gamma
    is the damping strength (adam's epsilon); tau the approximation rank
    (ginger/qng only, must stay below the model dimension).
    """

    kind: str
    learning_rate: float
    schedule: str = "constant"
    schedule_steps: int = 0  # horizon for the cosine schedule
    alpha: float = 0.99
    gamma: float = 1e-4
    tau: int = 8
    momentum_coef: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown optimizer kind {self.kind!r}; expected one of {KINDS}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.schedule!r}; expected one of {SCHEDULES}")
        if self.schedule == "cosine" and self.schedule_steps <= 0:
            raise ValueError("cosine schedule requires schedule_steps > 0")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.tau < 1:
            raise ValueError(f"tau must be >= 1, got {self.tau}")
        if not 0.0 <= self.momentum_coef < 1.0:
            raise ValueError(f"momentum_coef must lie in [0, 1), got {self.momentum_coef}")


def eta_at(config: OptimizerConfig, t: int) -> float:
    """Learning rate at step t (t starts at 0)."""
    base = config.learning_rate
    if config.schedule == "constant":
        return base
    if config.schedule == "inverse_sqrt":
        return base / math.sqrt(1.0 + t)
    frac = min(t, config.schedule_steps) / config.schedule_steps
    return base * 0.5 * (1.0 + math.cos(math.pi * frac))


class _OptimizerBase:
    kind: str

    def __init__(self, config: OptimizerConfig, dim: int):
        self.config = config
        self.dim = dim

    def step(
        self, params: np.ndarray, grad: np.ndarray, d_t: np.ndarray, eta: float
    ) -> np.ndarray:
        raise NotImplementedError

    def _state_arrays(self) -> dict:
        raise NotImplementedError

    def _load_state_arrays(self, state: dict) -> None:
        raise NotImplementedError


class GingerOptimizer(_OptimizerBase):
    """Preconditions the gradient with the factored inverse curvature state.

    The state update always precedes the parameter update.  An optional
    heavy-ball buffer on the preconditioned direction is controlled by
    momentum_coef and is off (0) in all oracle-equivalence tests.
    """

    kind = "ginger"

    def __init__(self, config: OptimizerConfig, dim: int):
        super().__init__(config, dim)
        if config.tau >= dim:
            raise ValueError(f"tau must be below the model dimension, got {config.tau} >= {dim}")
        self.factors: GgnFactors = make_factors(
            dim, config.tau, config.gamma, config.alpha, seed=config.seed
        )
        self.velocity = np.zeros(dim)

    def step(self, params, grad, d_t, eta):
        self.factors = update(self.factors, d_t)
        precond = direction(self.factors, grad, 1.0)
        mu = self.config.momentum_coef
        if mu > 0.0:
            self.velocity = mu * self.velocity + precond
            precond = self.velocity
        return params - eta * precond

    def _state_arrays(self):
        return {
            "basis": self.factors.basis.tolist(),
            "eigvals": self.factors.eigvals.tolist(),
            "step": self.factors.step,
            "velocity": self.velocity.tolist(),
        }

    def _load_state_arrays(self, state):
        self.factors = GgnFactors(
            dim=self.dim,
            rank=self.config.tau,
            gamma=self.config.gamma,
            alpha=self.config.alpha,
            basis=np.asarray(state["basis"], dtype=np.float64),
            eigvals=np.asarray(state["eigvals"], dtype=np.float64),
            step=int(state["step"]),
        )
        self.velocity = np.asarray(state["velocity"], dtype=np.float64)


class MomentumOptimizer(_OptimizerBase):
    """Classical heavy ball: v <- mu*v + grad; params <- params - eta*v."""

    kind = "momentum"

    def __init__(self, config: OptimizerConfig, dim: int):
        super().__init__(config, dim)
        self.velocity = np.zeros(dim)

    def step(self, params, grad, d_t, eta):
        self.velocity = self.config.momentum_coef * self.velocity + grad
        return params - eta * self.velocity

    def _state_arrays(self):
        return {"velocity": self.velocity.tolist()}

    def _load_state_arrays(self, state):
        self.velocity = np.asarray(state["velocity"], dtype=np.float64)


class AdamOptimizer(_OptimizerBase):
    """Standard Adam with bias correction.

    beta1 = momentum_coef, beta2 = alpha, epsilon = gamma.
    """

    kind = "adam"

    def __init__(self, config: OptimizerConfig, dim: int):
        super().__init__(config, dim)
        self.m = np.zeros(dim)
        self.v = np.zeros(dim)
        self.t = 0

    def step(self, params, grad, d_t, eta):
        beta1, beta2, eps = self.config.momentum_coef, self.config.alpha, self.config.gamma
        self.t += 1
        self.m = beta1 * self.m + (1.0 - beta1) * grad
        self.v = beta2 * self.v + (1.0 - beta2) * grad * grad
        m_hat = self.m / (1.0 - beta1**self.t)
        v_hat = self.v / (1.0 - beta2**self.t)
        return params - eta * m_hat / (np.sqrt(v_hat) + eps)

    def _state_arrays(self):
        return {"m": self.m.tolist(), "v": self.v.tolist(), "t": self.t}

    def _load_state_arrays(self, state):
        self.m = np.asarray(state["m"], dtype=np.float64)
        self.v = np.asarray(state["v"], dtype=np.float64)
        self.t = int(state["t"])


# --- QNG baseline -----------------------------------------------------------
#
# The moving-average curvature is factored as A A^T with A a product of
# scaled-identity-plus-rank-one terms sqrt(alpha)*I + beta q q^T; only the
# most recent tau factors are kept.  Each factor inverts analytically by the
# rank-one inverse identity, so both the state update and the direction query
# are O(d * tau).


@dataclass
class QngState:
    alpha: float
    tau: int
    factors: deque = field(default_factory=deque)  # (q, beta) pairs, oldest first


def _qng_apply_inverse(q: np.ndarray, beta: float, alpha: float, vec: np.ndarray) -> np.ndarray:
    """Apply (sqrt(alpha)*I + beta q q^T)^{-1} analytically."""
    root = math.sqrt(alpha)
    coeff = beta / (root + beta * float(q @ q))
    return (vec - coeff * q * float(q @ vec)) / root


def qng_update(state: QngState, d_t: np.ndarray) -> QngState:
    """Push the factor absorbing d_t, evicting the oldest beyond tau.

    q is d_t pulled back through the stored inverse factors.  The weight
    beta = (1 - alpha) / (sqrt(alpha + (1-alpha)|q|^2) + sqrt(alpha)) is the
    cancellation-free form of the moving-average matching condition and
    tends to the analytic limit (1-alpha)/(2 sqrt(alpha)) as |q| -> 0.
    """
    d_t = np.asarray(d_t, dtype=np.float64)
    q = d_t
    for prev_q, prev_beta in state.factors:
        q = _qng_apply_inverse(prev_q, prev_beta, state.alpha, q)
    norm_sq = float(q @ q)
    if norm_sq == 0.0:
        return state  # degenerate: nothing to absorb
    beta = (1.0 - state.alpha) / (
        math.sqrt(state.alpha + (1.0 - state.alpha) * norm_sq) + math.sqrt(state.alpha)
    )
    factors = deque(state.factors)
    factors.append((q, beta))
    while len(factors) > state.tau:
        factors.popleft()
    return QngState(alpha=state.alpha, tau=state.tau, factors=factors)


def qng_direction(state: QngState, g: np.ndarray) -> np.ndarray:
    """(A A^T)^{-1} g: inverse factors oldest-to-newest, then back."""
    out = np.asarray(g, dtype=np.float64)
    for q, beta in state.factors:
        out = _qng_apply_inverse(q, beta, state.alpha, out)
    for q, beta in reversed(state.factors):
        out = _qng_apply_inverse(q, beta, state.alpha, out)
    return out


class QngOptimizer(_OptimizerBase):
    """Quasi-natural gradient baseline with the same optional momentum blend."""

    kind = "qng"

    def __init__(self, config: OptimizerConfig, dim: int):
        super().__init__(config, dim)
        if config.tau >= dim:
            raise ValueError(f"tau must be below the model dimension, got {config.tau} >= {dim}")
        self.state = QngState(alpha=config.alpha, tau=config.tau)
        self.velocity = np.zeros(dim)

    def step(self, params, grad, d_t, eta):
        self.state = qng_update(self.state, d_t)
        precond = qng_direction(self.state, grad)
        mu = self.config.momentum_coef
        if mu > 0.0:
            self.velocity = mu * self.velocity + precond
            precond = self.velocity
        return params - eta * precond

    def _state_arrays(self):
        return {
            "factors": [{"q": q.tolist(), "beta": beta} for q, beta in self.state.factors],
            "velocity": self.velocity.tolist(),
        }

    def _load_state_arrays(self, state):
        factors = deque(
            (np.asarray(f["q"], dtype=np.float64), float(f["beta"])) for f in state["factors"]
        )
        self.state = QngState(alpha=self.config.alpha, tau=self.config.tau, factors=factors)
        self.velocity = np.asarray(state["velocity"], dtype=np.float64)


_REGISTRY = {
    cls.kind: cls for cls in (GingerOptimizer, MomentumOptimizer, AdamOptimizer, QngOptimizer)
}


def build_optimizer(config: OptimizerConfig, dim: int) -> _OptimizerBase:
    return _REGISTRY[config.kind](config, dim)


def save_optimizer(opt: _OptimizerBase, path) -> None:
    """Self-describing versioned JSON checkpoint (kind tag, config, buffers)."""
    payload = {
        "format": _CHECKPOINT_FORMAT,
        "version": _CHECKPOINT_VERSION,
        "kind": opt.kind,
        "dim": opt.dim,
        "config": asdict(opt.config),
        "state": opt._state_arrays(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_optimizer(path) -> _OptimizerBase:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != _CHECKPOINT_FORMAT:
        raise ValueError(f"not an optimizer checkpoint: {payload.get('format')!r}")
    if payload.get("version") != _CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    config = OptimizerConfig(**payload["config"])
    opt = build_optimizer(config, payload["dim"])
    opt._load_state_arrays(payload["state"])
    return opt

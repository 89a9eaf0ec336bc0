"""Synthetic exponential-family prediction tasks.

Gaussian-blob classification fed to either a linear softmax model or a
small tanh MLP, with exact closed-form gradients (no autodiff framework;
the models are small enough that hand-written backprop is simpler and keeps
the dependency surface tiny).  Tasks also produce model-sampled score
directions: labels drawn from the model's own predictive distribution,
whose score outer products estimate the Fisher information.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SyntheticDataset",
    "TaskInstance",
    "load_dataset",
    "make_synthetic",
    "save_dataset",
]

_DATASET_MAGIC = b"GBLB"
_DATASET_VERSION = 1
_DATASET_HEADER = struct.Struct("<4sI4q")  # magic, version, n, dim, classes, seed


@dataclass
class SyntheticDataset:
    """Immutable classification dataset: features x (n, dim), labels y (n,)."""

    x: np.ndarray
    y: np.ndarray
    num_classes: int
    seed: int

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]


def make_synthetic(
    n: int, dim: int, classes: int, blob_spread: float, seed: int
) -> SyntheticDataset:
    """Gaussian-blob data: class centers drawn once, points = center + spread*noise.

    Feature scales follow a fixed power law (coordinate j scaled by
    (1+j)^-1), matching the ill-conditioned variance spectra of real data;
    isotropic blobs would make every curvature-aware method equivalent to
    plain gradient descent.  Reproducible under seed; label i mod classes
    keeps class counts balanced.
    """
    if n <= 0 or dim <= 0 or classes <= 0:
        raise ValueError(f"sizes must be positive, got n={n}, dim={dim}, classes={classes}")
    if blob_spread < 0:
        raise ValueError(f"blob_spread must be nonnegative, got {blob_spread}")
    rng = np.random.default_rng(seed)
    scales = 1.0 / (1.0 + np.arange(dim))
    centers = rng.standard_normal((classes, dim))
    y = np.arange(n, dtype=np.int64) % classes
    x = (centers[y] + blob_spread * rng.standard_normal((n, dim))) * scales
    return SyntheticDataset(x=x, y=y, num_classes=classes, seed=seed)


def save_dataset(dataset: SyntheticDataset, path) -> None:
    """Flat little-endian binary: header {n, dim, classes, seed}, x float64
    row-major, y int64."""
    header = _DATASET_HEADER.pack(
        _DATASET_MAGIC,
        _DATASET_VERSION,
        dataset.n,
        dataset.dim,
        dataset.num_classes,
        dataset.seed,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(dataset.x, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(dataset.y, dtype="<i8").tobytes())


def load_dataset(path) -> SyntheticDataset:
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, version, n, dim, classes, seed = _DATASET_HEADER.unpack_from(raw, 0)
    if magic != _DATASET_MAGIC:
        raise ValueError(f"not a dataset file (magic {magic!r})")
    if version != _DATASET_VERSION:
        raise ValueError(f"unsupported dataset version {version}")
    offset = _DATASET_HEADER.size
    x = np.frombuffer(raw, dtype="<f8", count=n * dim, offset=offset).reshape(n, dim)
    offset += n * dim * 8
    y = np.frombuffer(raw, dtype="<i8", count=n, offset=offset)
    return SyntheticDataset(x=x.copy(), y=y.copy(), num_classes=classes, seed=seed)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _sample_rows(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row, inverse-CDF on a single uniform per row."""
    cum = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0])
    idx = (cum < u[:, None]).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


class TaskInstance:
    """A model (parameter vector + architecture) bound to a dataset.

    arch is "softmax_linear" (logits = x W^T + b) or "mlp"
    (logits = W2 tanh(W1 x + b1) + b2) with configurable hidden width.
    Parameters live in a single flat float64 vector; evaluation is pure
    given (params, batch, rng).
    """

    def __init__(
        self,
        dataset: SyntheticDataset,
        arch: str = "softmax_linear",
        hidden: int = 16,
        param_seed: int = 0,
        param_scale: float = 0.1,
        batch_seed: int = 0,
    ):
        if arch not in ("softmax_linear", "mlp"):
            raise ValueError(f"unknown architecture {arch!r}")
        self.dataset = dataset
        self.arch = arch
        self.hidden = int(hidden)
        self.in_dim = dataset.dim
        self.num_classes = dataset.num_classes
        self._batch_rng = np.random.default_rng(batch_seed)
        self.params = self._init_params(param_seed, param_scale)

    @property
    def num_params(self) -> int:
        return self.params.size

    def _shapes(self):
        c, n, h = self.num_classes, self.in_dim, self.hidden
        if self.arch == "softmax_linear":
            return [("w", (c, n)), ("b", (c,))]
        return [("w1", (h, n)), ("b1", (h,)), ("w2", (c, h)), ("b2", (c,))]

    def _init_params(self, seed: int, scale: float) -> np.ndarray:
        rng = np.random.default_rng(seed)
        chunks = []
        for name, shape in self._shapes():
            fan_in = shape[1] if len(shape) == 2 else 1
            chunks.append(rng.standard_normal(shape).ravel() * scale / np.sqrt(fan_in))
        return np.concatenate(chunks)

    def _unpack(self, params: np.ndarray):
        out = {}
        offset = 0
        for name, shape in self._shapes():
            size = int(np.prod(shape))
            out[name] = params[offset : offset + size].reshape(shape)
            offset += size
        return out

    def sample_batch(self, batch_size: int) -> tuple[np.ndarray, np.ndarray]:
        """IID batch with replacement from the task's seeded sampler."""
        idx = self._batch_rng.integers(self.dataset.n, size=batch_size)
        return self.dataset.x[idx], self.dataset.y[idx]

    def full_batch(self) -> tuple[np.ndarray, np.ndarray]:
        return self.dataset.x, self.dataset.y

    def logits(self, x: np.ndarray, params: np.ndarray | None = None) -> np.ndarray:
        p = self._unpack(self.params if params is None else params)
        if self.arch == "softmax_linear":
            return x @ p["w"].T + p["b"]
        hidden = np.tanh(x @ p["w1"].T + p["b1"])
        return hidden @ p["w2"].T + p["b2"]

    def loss_at(self, params: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
        logp = _log_softmax(self.logits(x, params))
        return float(-logp[np.arange(len(y)), y].mean())

    def _backprop(self, params: np.ndarray, x: np.ndarray, dlogits: np.ndarray) -> np.ndarray:
        """Gradient of sum(logits * dlogits) wrt the flat parameter vector."""
        p = self._unpack(params)
        if self.arch == "softmax_linear":
            return np.concatenate([(dlogits.T @ x).ravel(), dlogits.sum(axis=0)])
        pre = x @ p["w1"].T + p["b1"]
        hidden = np.tanh(pre)
        dhidden = dlogits @ p["w2"]
        dpre = dhidden * (1.0 - hidden * hidden)
        return np.concatenate(
            [
                (dpre.T @ x).ravel(),
                dpre.sum(axis=0),
                (dlogits.T @ hidden).ravel(),
                dlogits.sum(axis=0),
            ]
        )

    def loss_and_grad(
        self, x: np.ndarray, y: np.ndarray, params: np.ndarray | None = None
    ) -> tuple[float, np.ndarray]:
        """Mean negative log-likelihood over the batch and its exact gradient."""
        params = self.params if params is None else params
        logits = self.logits(x, params)
        logp = _log_softmax(logits)
        loss = float(-logp[np.arange(len(y)), y].mean())
        dlogits = np.exp(logp)
        dlogits[np.arange(len(y)), y] -= 1.0
        dlogits /= len(y)
        return loss, self._backprop(params, x, dlogits)

    def fisher_direction(
        self,
        x: np.ndarray,
        rng: np.random.Generator,
        params: np.ndarray | None = None,
        samples_per_input: int = 1,
    ) -> np.ndarray:
        """Score direction with labels sampled from the model's own predictions.

        For each input, draw yhat ~ p(.|x), accumulate the log-likelihood
        gradient, and scale by 1/sqrt(batch).  One draw per input by default;
        samples_per_input > 1 averages several draws (variance studies).
        Deterministic given rng state.
        """
        if samples_per_input < 1:
            raise ValueError(f"samples_per_input must be >= 1, got {samples_per_input}")
        params = self.params if params is None else params
        probs = np.exp(_log_softmax(self.logits(x, params)))
        total = np.zeros(self.num_params)
        for _ in range(samples_per_input):
            yhat = _sample_rows(probs, rng)
            dlogits = -probs.copy()
            dlogits[np.arange(len(yhat)), yhat] += 1.0
            total += self._backprop(params, x, dlogits)
        return total / (samples_per_input * np.sqrt(x.shape[0]))

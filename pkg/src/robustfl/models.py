"""Small numpy classifiers with hand-written backprop and mini-batch SGD.

Parameters live in one flat float vector (float64 unless asked otherwise); per-layer weight matrices and
bias vectors are views into it.  That keeps strategy state (control
variates, dynamic regularizers) and aggregation as plain vector arithmetic.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .losses import BoundedLoss, loss_values

ARCHITECTURES = {
    "linear": (),
    "mlp_200_100": (200, 100),
}

CHECKPOINT_MAGIC = b"RFLM"
CHECKPOINT_VERSION = 1


class DivergenceError(RuntimeError):
    def __init__(self, message: str, round: int | None = None, client: int | None = None):
        self.round = round
        self.client = client
        where = []
        if round is not None:
            where.append(f"round {round}")
        if client is not None:
            where.append(f"client {client}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


def _layer_shapes(sizes: tuple[int, ...]) -> list[tuple[tuple[int, int], int]]:
    return [((sizes[i], sizes[i + 1]), sizes[i + 1]) for i in range(len(sizes) - 1)]


@dataclass
class ModelParams:
    arch: str
    sizes: tuple[int, ...]
    flat: np.ndarray

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        expected = sum(a * b + c for (a, b), c in _layer_shapes(self.sizes))
        self.flat = np.asarray(self.flat)
        if self.flat.dtype not in (np.float32, np.float64):
            self.flat = self.flat.astype(np.float64)
        if self.flat.shape != (expected,):
            raise ValueError(f"{self.arch} with sizes {self.sizes} needs {expected} values, got {self.flat.shape}")

    @property
    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return unflatten(self.flat, self.sizes)

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def num_classes(self) -> int:
        return self.sizes[-1]

    def copy(self) -> "ModelParams":
        return replace(self, flat=self.flat.copy())

    def with_flat(self, flat: np.ndarray) -> "ModelParams":
        return replace(self, flat=np.asarray(flat, dtype=self.flat.dtype))

    @property
    def dtype(self):
        return self.flat.dtype


def unflatten(flat: np.ndarray, sizes) -> list[tuple[np.ndarray, np.ndarray]]:
    out = []
    pos = 0
    for (fan_in, fan_out), nb in _layer_shapes(tuple(sizes)):
        w = flat[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out)
        pos += fan_in * fan_out
        b = flat[pos : pos + nb]
        pos += nb
        out.append((w, b))
    return out


def init_params(arch: str, in_dim: int, num_classes: int, seed: int, dtype=np.float64) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    if arch not in ARCHITECTURES:
        raise ValueError(f"unknown architecture {arch!r}; expected one of {sorted(ARCHITECTURES)}")
    sizes = (in_dim, *ARCHITECTURES[arch], num_classes)
    rng = np.random.default_rng([seed, 0x1417])
    parts = []
    for (fan_in, fan_out), nb in _layer_shapes(sizes):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        parts.append(rng.uniform(-limit, limit, size=fan_in * fan_out))
        parts.append(np.zeros(nb))
    return ModelParams(arch, sizes, np.concatenate(parts).astype(dtype))


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


def _check_features(params: ModelParams, features: np.ndarray) -> np.ndarray:
    x = np.asarray(features, dtype=params.flat.dtype)
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise ValueError(f"expected features of shape (n, {params.in_dim}), got {x.shape}")
    return x


def _forward_cache(layers, x):
    acts = [x]
    h = x
    for i, (w, b) in enumerate(layers):
        h = h @ w + b
        if i < len(layers) - 1:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return acts


def forward(params: ModelParams, features) -> np.ndarray:
    """Softmax class probabilities, one row per input."""
    x = _check_features(params, features)
    # Normalize in float64 so rows sum to one tightly even for float32 models.
    return _softmax(_forward_cache(params.layers, x)[-1].astype(np.float64))


def backward(params: ModelParams, features, labels, weight_decay: float = 0.0) -> tuple[np.ndarray, float]:
    """Gradient (flat) and value of mean cross-entropy + weight_decay/2 * ||params||^2."""
    x = _check_features(params, features)
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (x.shape[0],):
        raise ValueError(f"expected {x.shape[0]} labels, got shape {y.shape}")
    if y.size and (y.min() < 0 or y.max() >= params.num_classes):
        raise ValueError("label out of range")
    layers = params.layers
    acts = _forward_cache(layers, x)
    logits = acts[-1]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(y.size)
    ce = float(np.mean(log_norm - shifted[rows, y]))

    grad = np.empty_like(params.flat)
    grad_layers = unflatten(grad, params.sizes)
    delta = _softmax(logits.copy())
    delta[rows, y] -= 1.0
    delta /= y.size
    for i in range(len(layers) - 1, -1, -1):
        gw, gb = grad_layers[i]
        np.matmul(acts[i].T, delta, out=gw)
        gb[...] = delta.sum(axis=0)
        if i:
            delta = (delta @ layers[i][0].T) * (acts[i] > 0)
    if weight_decay:
        grad += weight_decay * params.flat
    loss = ce + 0.5 * weight_decay * float(params.flat @ params.flat)
    return grad, loss


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    local_epochs: int = 5
    batch_size: int = 50
    weight_decay: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError(f"learning_rate must be nonnegative, got {self.learning_rate}")
        if self.local_epochs < 1:
            raise ValueError(f"local_epochs must be at least 1, got {self.local_epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be nonnegative, got {self.weight_decay}")


# Maps the current flat parameters to an additive gradient term.
GradientHook = Callable[[np.ndarray], np.ndarray]


@dataclass
class LocalResult:
    params: ModelParams
    squared_losses: np.ndarray
    steps: int
    train_loss: float


def local_sgd(
    params: ModelParams,
    features,
    labels,
    cfg: TrainConfig,
    hook: GradientHook | None = None,
    eval_loss: BoundedLoss | None = None,
) -> LocalResult:
    """Run ``cfg.local_epochs`` of shuffled mini-batch SGD on a copy of ``params``.

    After training, ``eval_loss`` is evaluated on the same data and its squares
    are returned for moment estimation.
    """
    x = _check_features(params, features)
    y = np.asarray(labels, dtype=np.int64)
    n = y.size
    if n == 0:
        raise ValueError("local_sgd needs a nonempty data slice")
    eval_loss = eval_loss or BoundedLoss()
    rng = np.random.default_rng([cfg.seed, 0x56D])
    model = params.copy()
    steps = 0
    last_loss = float("nan")
    epoch_losses = []
    # Overflow is caught by the explicit finiteness check below.
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(cfg.local_epochs):
            order = rng.permutation(n)
            epoch_losses = []
            for start in range(0, n, cfg.batch_size):
                batch = order[start : start + cfg.batch_size]
                grad, last_loss = backward(model, x[batch], y[batch], cfg.weight_decay)
                if hook is not None:
                    grad += hook(model.flat)
                model.flat -= cfg.learning_rate * grad
                steps += 1
                epoch_losses.append(last_loss)
            if not np.all(np.isfinite(model.flat)):
                raise DivergenceError("non-finite parameters after local SGD")
    probs = forward(model, x)
    losses = loss_values(eval_loss, probs, y)
    return LocalResult(model, losses**2, steps, float(np.mean(epoch_losses)))


def cross_entropy(params: ModelParams, features, labels) -> float:
    probs = forward(params, features)
    rows = np.arange(len(labels))
    return float(-np.mean(np.log(np.maximum(probs[rows, labels], 1e-300))))


def accuracy(params: ModelParams, features, labels) -> float:
    return float(np.mean(np.argmax(forward(params, features), axis=1) == np.asarray(labels)))


def save_checkpoint(path, params: ModelParams) -> None:
    """Binary checkpoint: magic, version, arch tag, layer sizes, row-major float64 values."""
    tag = params.arch.encode("ascii")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack(">IH", CHECKPOINT_VERSION, len(tag)))
        fh.write(tag)
        fh.write(struct.pack(">I", len(params.sizes)))
        fh.write(struct.pack(f">{len(params.sizes)}I", *params.sizes))
        fh.write(params.flat.astype(">f8").tobytes())


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a model checkpoint")
    version, tag_len = struct.unpack_from(">IH", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 10
    arch = blob[pos : pos + tag_len].decode("ascii")
    pos += tag_len
    (n_sizes,) = struct.unpack_from(">I", blob, pos)
    pos += 4
    sizes = struct.unpack_from(f">{n_sizes}I", blob, pos)
    pos += 4 * n_sizes
    flat = np.frombuffer(blob, dtype=">f8", offset=pos).astype(float)
    return ModelParams(arch, sizes, flat)

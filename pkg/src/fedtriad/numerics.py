"""Dense models and hand-derived gradients for desk-scale federated training.

Two architectures are provided: multinomial logistic regression and a
one-hidden-layer tanh MLP. Parameters live in a single flat float64 vector
(:class:`ModelParams`) so privacy stages, secret sharing, and aggregation can
treat a model as an opaque real vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DivergenceError, InvalidInputError
from .rng import RngStream


@dataclass
class ModelParams:
    """Flat parameter vector plus per-layer (rows, cols) shapes."""

    values: np.ndarray
    shapes: list[tuple[int, int]]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        expected = sum(r * c for r, c in self.shapes)
        if expected != self.values.size:
            raise ConfigurationError(
                f"parameter vector has {self.values.size} entries, shapes need {expected}"
            )
        if not np.all(np.isfinite(self.values)):
            raise InvalidInputError("parameter vector contains non-finite values")

    @property
    def dim(self) -> int:
        return self.values.size

    def layers(self) -> list[np.ndarray]:
        """Views of the flat vector, one per layer, in declaration order."""
        out, at = [], 0
        for r, c in self.shapes:
            out.append(self.values[at : at + r * c].reshape(r, c))
            at += r * c
        return out

    def copy(self) -> "ModelParams":
        return ModelParams(self.values.copy(), list(self.shapes))

    def replace_values(self, values: np.ndarray) -> "ModelParams":
        return ModelParams(np.asarray(values, dtype=np.float64), list(self.shapes))


@dataclass
class Batch:
    """A design matrix and integer labels in [0, num_classes)."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64).ravel()
        if self.features.ndim != 2:
            raise InvalidInputError("features must be a 2-d matrix")
        if self.features.shape[0] != self.labels.shape[0]:
            raise InvalidInputError(
                f"{self.features.shape[0]} feature rows vs {self.labels.shape[0]} labels"
            )

    def __len__(self) -> int:
        return self.labels.shape[0]


@dataclass(frozen=True)
class Architecture:
    """Which model to instantiate: 'logreg' or 'mlp' (tanh hidden layer)."""

    kind: str
    input_dim: int
    num_classes: int
    hidden: int = 64

    def __post_init__(self):
        if self.kind not in ("logreg", "mlp"):
            raise ConfigurationError(f"unknown architecture kind {self.kind!r}")
        if self.input_dim < 1 or self.num_classes < 2:
            raise ConfigurationError("architecture needs input_dim >= 1, num_classes >= 2")

    def shapes(self) -> list[tuple[int, int]]:
        f, c, h = self.input_dim, self.num_classes, self.hidden
        if self.kind == "logreg":
            return [(f, c), (1, c)]
        return [(f, h), (1, h), (h, c), (1, c)]


def init_params(arch: Architecture, rng: RngStream | None = None, scale: float = 0.05) -> ModelParams:
    """Zero weights by default; small Gaussian init when a stream is given."""
    shapes = arch.shapes()
    dim = sum(r * c for r, c in shapes)
    if rng is None:
        return ModelParams(np.zeros(dim), shapes)
    gen = rng.generator()
    return ModelParams(gen.normal(0.0, scale, size=dim), shapes)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _check_batch(arch: Architecture, batch: Batch):
    if batch.features.shape[1] != arch.input_dim:
        raise ConfigurationError(
            f"batch has {batch.features.shape[1]} features, architecture expects {arch.input_dim}"
        )
    if len(batch) and (batch.labels.min() < 0 or batch.labels.max() >= arch.num_classes):
        raise InvalidInputError("labels out of range for architecture")


def forward(model: ModelParams, arch: Architecture, batch: Batch) -> np.ndarray:
    """Class-probability matrix (n x num_classes); rows sum to 1."""
    _check_batch(arch, batch)
    x = batch.features
    if arch.kind == "logreg":
        w, b = model.layers()
        logits = x @ w + b
    else:
        w1, b1, w2, b2 = model.layers()
        hidden = np.tanh(x @ w1 + b1)
        logits = hidden @ w2 + b2
    return _softmax(logits)


def loss_and_grad(model: ModelParams, arch: Architecture, batch: Batch) -> tuple[float, ModelParams]:
    """Mean cross-entropy loss and its gradient w.r.t. the flat parameters."""
    _check_batch(arch, batch)
    n = len(batch)
    if n == 0:
        raise InvalidInputError("cannot compute loss on an empty batch")
    x, y = batch.features, batch.labels
    grad = np.zeros_like(model.values)
    grad_model = model.replace_values(grad)

    if arch.kind == "logreg":
        w, b = model.layers()
        probs = _softmax(x @ w + b)
        loss = -np.mean(np.log(np.clip(probs[np.arange(n), y], 1e-300, None)))
        dz = probs
        dz[np.arange(n), y] -= 1.0
        dz /= n
        gw, gb = grad_model.layers()
        gw[:] = x.T @ dz
        gb[:] = dz.sum(axis=0)
    else:
        w1, b1, w2, b2 = model.layers()
        hidden = np.tanh(x @ w1 + b1)
        probs = _softmax(hidden @ w2 + b2)
        loss = -np.mean(np.log(np.clip(probs[np.arange(n), y], 1e-300, None)))
        dz = probs
        dz[np.arange(n), y] -= 1.0
        dz /= n
        dh = (dz @ w2.T) * (1.0 - hidden ** 2)
        g1, gb1, g2, gb2 = grad_model.layers()
        g2[:] = hidden.T @ dz
        gb2[:] = dz.sum(axis=0)
        g1[:] = x.T @ dh
        gb1[:] = dh.sum(axis=0)

    return float(loss), grad_model


def local_train(
    model: ModelParams,
    arch: Architecture,
    batch: Batch,
    epochs: int,
    lr: float,
    batch_size: int,
    rng: RngStream,
    round_index: int | None = None,
) -> ModelParams:
    """Plain mini-batch SGD for `epochs` passes; pure in (inputs, rng stream).

    Index order is reshuffled each epoch from the stream's generator and the
    last partial batch is kept, so the result is bit-reproducible.
    """
    if epochs < 1:
        raise InvalidInputError("epochs must be >= 1")
    if lr < 0:
        raise InvalidInputError("learning rate must be >= 0")
    if batch_size < 1:
        raise InvalidInputError("batch_size must be >= 1")
    _check_batch(arch, batch)
    if len(batch) == 0:
        raise InvalidInputError("cannot train on an empty shard")

    gen = rng.generator()
    current = model.copy()
    n = len(batch)
    for epoch in range(epochs):
        order = gen.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            mini = Batch(batch.features[idx], batch.labels[idx])
            loss, grad = loss_and_grad(current, arch, mini)
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}", round_index=round_index, epoch=epoch
                )
            current.values -= lr * grad.values
    return current

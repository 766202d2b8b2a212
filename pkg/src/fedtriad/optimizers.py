"""Fairness-weighted update computation and server aggregation.

The round arithmetic follows the loss-reweighting family: a client that
trained from w to w_bar reports delta = F^q * L * (w - w_bar) together with
a scalar weight h = q * F^(q-1) * ||L (w - w_bar)||^2 + L * F^q, and the
server moves the global model by sum(delta) / sum(h). q = 0 collapses to
plain federated averaging; the step constant L defaults to 1/lr so that a
single client with q = 0 adopts its locally trained weights exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DegenerateRoundError, InvalidInputError
from .numerics import Architecture, Batch, ModelParams, loss_and_grad
from .updates import Update

OPTIMIZERS = ("fedavg", "qfedavg", "qfedsgd")

_LOSS_FLOOR = 1e-10   # guards F^(q-1) at zero loss for q in (0, 1)


@dataclass
class FairnessConfig:
    optimizer: str = "qfedavg"
    q: float = 1.0
    lipschitz: float | None = None   # defaults to 1/lr at runtime

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ConfigurationError(
                f"fair.optimizer must be one of {OPTIMIZERS}", key="fair.optimizer"
            )
        if self.q < 0:
            raise ConfigurationError("fair.q must be >= 0", key="fair.q")
        if self.optimizer == "fedavg":
            self.q = 0.0
        if self.lipschitz is not None and self.lipschitz <= 0:
            raise ConfigurationError("fair.lipschitz must be > 0", key="fair.lipschitz")

    def resolve_lipschitz(self, lr: float) -> float:
        return self.lipschitz if self.lipschitz is not None else 1.0 / lr


@dataclass
class ClientContribution:
    delta: Update
    h: float
    loss: float
    client_id: int


def compute_delta(w_global: ModelParams, w_local: ModelParams, lipschitz: float) -> np.ndarray:
    """Pseudo-gradient L * (w_t - w_bar) of the local training step."""
    if w_global.dim != w_local.dim:
        raise InvalidInputError("global/local parameter dims differ")
    return lipschitz * (w_global.values - w_local.values)


def fairness_scale(delta: np.ndarray, loss: float, q: float) -> np.ndarray:
    """Reweight by loss^q; q = 0 leaves the update untouched."""
    if loss < 0:
        raise InvalidInputError("loss must be >= 0")
    if q == 0.0:
        return np.array(delta, dtype=np.float64, copy=True)
    return float(max(loss, _LOSS_FLOOR) ** q) * np.asarray(delta, dtype=np.float64)


def compute_h(loss: float, delta: np.ndarray, q: float, lipschitz: float) -> float:
    """Aggregation weight q*F^(q-1)*||delta||^2 + L*F^q (== L when q = 0)."""
    if loss < 0 or q < 0:
        raise InvalidInputError("loss and q must be >= 0")
    if q == 0.0:
        return float(lipschitz)
    f = max(loss, _LOSS_FLOOR)
    norm_sq = float(np.dot(delta, delta))
    return float(q * f ** (q - 1.0) * norm_sq + lipschitz * f ** q)


def aggregate(contributions: list[ClientContribution], prior: ModelParams) -> ModelParams:
    """w_{t+1} = w_t - sum(delta) / sum(h), folding in ascending client order.

    Deltas must already be back in the clear (decrypted / reconstructed).
    """
    if not contributions:
        raise InvalidInputError("need at least one contribution")
    ordered = sorted(contributions, key=lambda c: c.client_id)
    total_h = float(sum(c.h for c in ordered))
    if total_h == 0.0:
        raise DegenerateRoundError("aggregation weights sum to zero")
    total_delta = np.zeros(prior.dim, dtype=np.float64)
    for c in ordered:
        vec = c.delta.vector if isinstance(c.delta, Update) else np.asarray(c.delta)
        if vec.shape[0] != prior.dim:
            raise InvalidInputError(
                f"client {c.client_id} delta dim {vec.shape[0]} != model dim {prior.dim}"
            )
        total_delta += vec
    return prior.replace_values(prior.values - total_delta / total_h)


def qfedavg_contribution(
    w_global: ModelParams,
    w_local: ModelParams,
    loss_at_global: float,
    cfg: FairnessConfig,
    lr: float,
    client_id: int,
) -> ClientContribution:
    """Package one client's local-training outcome for the server."""
    lipschitz = cfg.resolve_lipschitz(lr)
    delta_w = compute_delta(w_global, w_local, lipschitz)
    delta = fairness_scale(delta_w, loss_at_global, cfg.q)
    h = compute_h(loss_at_global, delta_w, cfg.q, lipschitz)
    return ClientContribution(
        delta=Update.plain(delta, h, client_id), h=h, loss=loss_at_global,
        client_id=client_id,
    )


def qfedsgd_contribution(
    w_global: ModelParams,
    arch: Architecture,
    batch: Batch,
    cfg: FairnessConfig,
    lr: float,
    client_id: int,
) -> ClientContribution:
    """Single-gradient variant: delta = F^q * grad F(w), no local epochs."""
    lipschitz = cfg.resolve_lipschitz(lr)
    loss, grad = loss_and_grad(w_global, arch, batch)
    delta = fairness_scale(grad.values, loss, cfg.q)
    h = compute_h(loss, grad.values, cfg.q, lipschitz)
    return ClientContribution(
        delta=Update.plain(delta, h, client_id), h=h, loss=loss, client_id=client_id,
    )

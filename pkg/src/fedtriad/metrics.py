"""Fairness and utility metrics plus multi-run aggregation.

Disparities are population variances (divide by K) of per-client losses or
accuracies; cross-run summaries use sample standard deviation (divide by
n - 1). All functions are pure and order-invariant in their client inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .numerics import Architecture, Batch, ModelParams, forward


@dataclass
class ClientEval:
    client_id: int
    loss: float
    accuracy: float

    def __post_init__(self):
        if self.loss < 0 or not 0.0 <= self.accuracy <= 1.0:
            raise InvalidInputError("loss must be >= 0 and accuracy in [0, 1]")


@dataclass
class RoundRecord:
    """One CSV row: utility, fairness, and whichever attack metrics ran."""

    run_id: int
    round: int
    scheme: str
    optimizer: str
    q: float
    acc: float = math.nan
    ld: float = math.nan
    ad: float = math.nan
    epsilon: float | None = None
    poly_degree: int | None = None
    shares: int | None = None
    msr: float | None = None
    dlr: float | None = None
    dpa_a: float | None = None
    dpa_ad: float | None = None
    ba_a: float | None = None
    ba_ad: float | None = None
    la_success: float | None = None
    sra_success: float | None = None
    wall_ms: float | None = None
    diverged: bool = False


def _population_variance(values: np.ndarray) -> float:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise InvalidInputError("need at least one client")
    mean = v.mean()
    return float(np.mean((v - mean) ** 2))


def loss_disparity(evals: list[ClientEval]) -> float:
    """Population variance of per-client losses; 0 iff all equal."""
    return _population_variance([e.loss for e in evals])


def accuracy_disparity(evals: list[ClientEval]) -> float:
    """Population variance of per-client held-out accuracies."""
    return _population_variance([e.accuracy for e in evals])


def global_accuracy(model: ModelParams, arch: Architecture, test: Batch) -> float:
    """Fraction of test points whose argmax class matches the label."""
    if len(test) == 0:
        raise InvalidInputError("empty test set")
    probs = forward(model, arch, test)
    return float(np.mean(probs.argmax(axis=1) == test.labels))


def attack_disparities(per_client_attack_acc: np.ndarray) -> tuple[float, float]:
    """(mean effect, population variance) of a per-client attack accuracy."""
    v = np.asarray(per_client_attack_acc, dtype=np.float64)
    if v.size == 0:
        raise InvalidInputError("need at least one client")
    return float(v.mean()), _population_variance(v)


_SUMMARY_FIELDS = ("acc", "ld", "ad", "msr", "dlr", "dpa_a", "dpa_ad",
                   "ba_a", "ba_ad", "la_success", "sra_success")


def summarize_runs(final_records: list[RoundRecord]) -> dict[str, tuple[float, float]]:
    """Mean and sample std per metric over the runs' final-round records.

    Metrics that are None (not applicable to the scheme) or NaN (diverged
    rounds) are skipped; a single run reports std 0.
    """
    if not final_records:
        raise InvalidInputError("no runs to summarize")
    out: dict[str, tuple[float, float]] = {}
    for name in _SUMMARY_FIELDS:
        vals = [getattr(r, name) for r in final_records]
        vals = [v for v in vals if v is not None and not math.isnan(v)]
        if not vals:
            continue
        arr = np.asarray(vals, dtype=np.float64)
        std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
        out[name] = (float(arr.mean()), std)
    return out

"""Gradient clipping and the Gaussian mechanism.

Noise is calibrated as sigma = sensitivity / epsilon, matching the update
rule this simulator follows (delta is recorded metadata and does not enter
the scale unless ``calibrated_delta`` is switched on, which uses the textbook
sigma = sensitivity * sqrt(2 ln(1.25/delta)) / epsilon instead).

Three placements:
  local   - clip then noise each client's update independently
  global  - clip at clients; one noise draw at the server after summation
  masking - clip+noise with independent per-layer clip bounds
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .updates import Update, UpdateState

PLACEMENTS = ("local", "global", "masking")


@dataclass
class DpConfig:
    epsilon: float = 8.0
    delta: float = 1e-5          # recorded; not used in the default noise scale
    clip_norm: float = 1.0
    placement: str = "local"
    sensitivity: float | None = None     # defaults to clip_norm
    layer_clip_norms: list[float] | None = None  # masking only
    calibrated_delta: bool = False

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ConfigurationError("dp.epsilon must be > 0", key="dp.epsilon")
        if not 0.0 <= self.delta < 1.0:
            raise ConfigurationError("dp.delta must be in [0, 1)", key="dp.delta")
        if self.clip_norm <= 0:
            raise ConfigurationError("dp.clip_norm must be > 0", key="dp.clip_norm")
        if self.placement not in PLACEMENTS:
            raise ConfigurationError(
                f"dp.placement must be one of {PLACEMENTS}", key="dp.placement"
            )
        if self.sensitivity is None:
            self.sensitivity = self.clip_norm
        if self.sensitivity <= 0:
            raise ConfigurationError("dp sensitivity must be > 0", key="dp.sensitivity")

    @property
    def sigma(self) -> float:
        if self.calibrated_delta:
            if self.delta <= 0:
                raise ConfigurationError(
                    "calibrated noise needs dp.delta > 0", key="dp.delta"
                )
            return self.sensitivity * math.sqrt(2.0 * math.log(1.25 / self.delta)) / self.epsilon
        return self.sensitivity / self.epsilon


def clip(update: np.ndarray, clip_norm: float) -> np.ndarray:
    """Scale the vector onto the L2 ball of radius clip_norm (identity inside)."""
    v = np.asarray(update, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm <= clip_norm or norm == 0.0:
        return v.copy()
    return v * (clip_norm / norm)


def gaussian_noise(update: np.ndarray, cfg: DpConfig, rng: np.random.Generator) -> np.ndarray:
    """Add iid Gaussian noise with per-coordinate std sigma = sensitivity/epsilon."""
    v = np.asarray(update, dtype=np.float64)
    return v + rng.normal(0.0, cfg.sigma, size=v.shape)


def _clip_per_layer(vector: np.ndarray, shapes, bounds) -> np.ndarray:
    out, at = np.empty_like(vector), 0
    for (r, c), bound in zip(shapes, bounds):
        size = r * c
        out[at : at + size] = clip(vector[at : at + size], bound)
        at += size
    return out


def apply_dp_stage(updates: list[Update], cfg: DpConfig, rng: np.random.Generator,
                   layer_shapes=None) -> list[Update]:
    """Apply the configured DP placement to a batch of Plain updates.

    Local and masking placements return Noised updates. The global placement
    returns clipped updates tagged ``meta['gdp_pending']``; the server adds
    its single noise draw after summation (see ``server_gdp_noise``).
    """
    for u in updates:
        u.require_state(UpdateState.PLAIN, stage="dp")

    out = []
    if cfg.placement == "local":
        for u in updates:
            noised = gaussian_noise(clip(u.vector, cfg.clip_norm), cfg, rng)
            out.append(Update(UpdateState.NOISED, u.h, u.client_id, vector=noised,
                              meta=dict(u.meta)))
    elif cfg.placement == "global":
        for u in updates:
            clipped = clip(u.vector, cfg.clip_norm)
            meta = dict(u.meta)
            meta["gdp_pending"] = True
            out.append(Update(UpdateState.NOISED, u.h, u.client_id, vector=clipped,
                              meta=meta))
    else:  # masking
        bounds = cfg.layer_clip_norms
        if layer_shapes is None:
            # Without layer structure the mask degenerates to a single bound.
            for u in updates:
                bound = bounds[0] if bounds else cfg.clip_norm
                noised = gaussian_noise(clip(u.vector, bound), cfg, rng)
                out.append(Update(UpdateState.NOISED, u.h, u.client_id, vector=noised,
                                  meta=dict(u.meta)))
        else:
            if bounds is None:
                bounds = [cfg.clip_norm] * len(layer_shapes)
            if len(bounds) != len(layer_shapes):
                raise ConfigurationError(
                    "masking needs one clip bound per layer", key="dp.layer_clip_norms"
                )
            for u in updates:
                clipped = _clip_per_layer(u.vector, layer_shapes, bounds)
                noised = gaussian_noise(clipped, cfg, rng)
                out.append(Update(UpdateState.NOISED, u.h, u.client_id, vector=noised,
                                  meta=dict(u.meta)))
    return out


def server_gdp_noise(summed: np.ndarray, cfg: DpConfig, rng: np.random.Generator) -> np.ndarray:
    """The single server-side draw for the global placement."""
    return gaussian_noise(summed, cfg, rng)

"""Gradient privatization: L2 clipping plus seeded Gaussian noise.

Applied by the contract to every published gradient, so the agent only
ever sees the privatized form. With noise_multiplier 0 the operation is
clipping alone, and a gradient already inside the clip ball passes
through bit-exact; that zero-noise identity is what keeps the
counterfactual-retraining equivalence exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..seeds import derive_seed


@dataclass(frozen=True)
class DPParams:
    clip_norm: float = 1.0
    noise_multiplier: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        if self.noise_multiplier < 0:
            raise ValueError("noise_multiplier must be non-negative")


def clip(gradient: np.ndarray, clip_norm: float) -> np.ndarray:
    """Scale down to L2 norm clip_norm if above it; identity otherwise."""
    norm = float(np.linalg.norm(gradient))
    if norm <= clip_norm:
        return gradient
    return gradient * (clip_norm / norm)


def dp_apply(gradient: np.ndarray, dp: DPParams) -> np.ndarray:
    clipped = clip(np.asarray(gradient, dtype=np.float64), dp.clip_norm)
    if dp.noise_multiplier == 0.0:
        return clipped
    rng = np.random.default_rng(dp.rng_seed)
    noise = rng.normal(0.0, dp.noise_multiplier * dp.clip_norm, clipped.shape)
    return clipped + noise


def submission_seed(base_seed: int, client_id: str, epoch: int) -> int:
    """Noise seed for one (client, epoch) submission, independent across
    submissions so replaying any subset reproduces the same noise."""
    return derive_seed(base_seed, "dp", client_id, epoch)

"""Norm clipping, Gaussian noising and the clip+noise distortion bound."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, DataError
from .params import ParamVector


@dataclass(frozen=True)
class DpConfig:
    """Privacy knobs.

    Exactly one of ``noise_multiplier`` and ``target_epsilon`` is set; the
    latter is turned into a noise multiplier by :func:`fedblur.accountant.calibrate_sigma`
    once the number of rounds is known. ``clip`` may be ``math.inf`` to disable
    clipping (only meaningful with zero noise).
    """

    clip: float
    noise_multiplier: Optional[float] = None
    sample_prob: float = 1.0
    target_epsilon: Optional[float] = None
    delta: Optional[float] = None

    def __post_init__(self):
        if not self.clip > 0:
            raise ConfigError("dp.clip must be > 0")
        if (self.noise_multiplier is None) == (self.target_epsilon is None):
            raise ConfigError("set exactly one of dp.noise_multiplier and dp.target_epsilon")
        if self.noise_multiplier is not None and not self.noise_multiplier >= 0:
            raise ConfigError("dp.noise_multiplier must be >= 0")
        if self.target_epsilon is not None and not self.target_epsilon > 0:
            raise ConfigError("dp.target_epsilon must be > 0")
        if not 0 < self.sample_prob <= 1:
            raise ConfigError("dp.sample_prob must lie in (0, 1]")
        if self.delta is not None and not 0 < self.delta < 1:
            raise ConfigError("dp.delta must lie in (0, 1)")
        if math.isinf(self.clip) and (self.noise_multiplier or 0) > 0:
            raise ConfigError("noise requires a finite dp.clip")


def clip(update: ParamVector, S: float) -> tuple[ParamVector, float]:
    """Scale ``update`` into the L2 ball of radius ``S``.

    Returns the clipped vector and the factor ``1 / max(1, ||update|| / S)``.
    Vectors already inside the ball are returned unchanged (same values).
    """
    if not S > 0:
        raise ConfigError("clip threshold must be > 0")
    if not update.is_finite():
        raise DataError("update contains non-finite values")
    norm = update.norm()
    if norm <= S:
        return update, 1.0
    factor = S / norm
    clipped = update.like(update.values * factor)
    # rounding can leave the norm an ulp or two above S; shrink until it is not
    values = clipped.values
    while float(np.linalg.norm(values)) > S:
        values = values * (1.0 - 2.0 ** -52)
    return clipped.like(values), factor


def add_gaussian_noise(update: ParamVector, S: float, sigma: float, cohort_size: int, rng) -> ParamVector:
    """Add iid ``N(0, S^2 sigma^2 / cohort_size)`` noise to every coordinate.

    ``rng`` is a seed (anything accepted by :func:`numpy.random.default_rng`)
    or a ``numpy.random.Generator``. The generator is PCG64 and normals come
    from numpy's ziggurat sampler, so a seed fixes the output exactly.
    """
    if sigma < 0:
        raise ConfigError("noise multiplier must be >= 0")
    if cohort_size < 1:
        raise ConfigError("cohort size must be >= 1")
    if sigma == 0:
        return update
    if not math.isfinite(S):
        raise ConfigError("noise requires a finite clip threshold")
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    std = S * sigma / math.sqrt(cohort_size)
    return update.like(update.values + gen.normal(0.0, std, size=update.total_dim))


def mse_bound(raw_norm: float, S: float, sigma: float, cohort_size: int, d: int) -> float:
    """Expected per-coordinate squared error of clip+noise relative to the raw update."""
    if d < 1 or cohort_size < 1 or not S > 0 or raw_norm < 0 or sigma < 0:
        raise ConfigError("mse_bound arguments out of range")
    return max(0.0, raw_norm - S) ** 2 / d + sigma**2 * S**2 / cohort_size

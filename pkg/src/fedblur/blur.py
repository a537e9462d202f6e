"""Bounded local update regularization.

The local objective gets a penalty ``(lam/2) * max(0, ||w - w_anchor||^2 - S^2)``
which only bites once the local update leaves the clipping ball. Its gradient
contribution is ``lam * (w - w_anchor)`` outside the ball and zero inside; at
the boundary the zero subgradient is used.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .params import ParamVector


def check_lambda(lam: float, local_lr: float) -> None:
    if lam < 0:
        raise ConfigError("lambda must be >= 0")
    if lam * local_lr >= 1:
        raise ConfigError(f"lambda * local_lr must be < 1 (got {lam} * {local_lr} = {lam * local_lr})")


def blur_penalty(w: ParamVector, w_anchor: ParamVector, S: float) -> float:
    diff = w - w_anchor
    return max(0.0, float(diff.values @ diff.values) - S * S)


def is_active(w: ParamVector, w_anchor: ParamVector, S: float) -> bool:
    return (w - w_anchor).norm() > S


def blur_gradient(w: ParamVector, w_anchor: ParamVector, S: float, lam: float) -> ParamVector:
    """Gradient of the penalty term alone; the caller adds the loss gradient."""
    diff = w - w_anchor
    if diff.norm() > S:
        return diff * lam
    return diff.zeros_like()


def discount_trace(step_norms, S: float, lam: float, local_lr: float, reading: str = "unrolled") -> list[float]:
    """Per-step learning-rate discount induced by the regularizer.

    ``step_norms[q]`` is the distance from the anchor of the iterate that step
    ``q`` starts from. A step is active when that distance exceeds ``S``.

    ``reading="unrolled"`` returns the exact weights of the unrolled recursion
    ``u_q = (1 - lam*lr) u_{q-1} - lr g_q``: step ``q``'s gradient is shrunk once
    for every later active step. ``reading="indexed"`` returns
    ``(1 - lam*lr)**q`` for active steps and 1 otherwise.
    """
    check_lambda(lam, local_lr)
    rate = 1.0 - lam * local_lr
    active = [n > S for n in step_norms]
    if reading == "indexed":
        return [rate**q if a else 1.0 for q, a in enumerate(active)]
    if reading != "unrolled":
        raise ConfigError(f"unknown reading {reading!r}")
    gammas = [1.0] * len(active)
    later = 0
    for q in range(len(active) - 1, -1, -1):
        gammas[q] = rate**later
        later += active[q]
    return gammas


def unrolled_update(gradients, gammas, local_lr: float) -> np.ndarray:
    """``-lr * sum_q gamma_q g_q`` for flat gradient arrays."""
    total = np.zeros_like(np.asarray(gradients[0], dtype=np.float64))
    for g, gamma in zip(gradients, gammas):
        total += gamma * np.asarray(g, dtype=np.float64)
    return -local_lr * total

"""Local update sparsification.

Each coordinate of an update is scored by the first-order loss change caused
by reverting it, ``|grad * update|``. Per layer only the ``s_j`` highest-scoring
coordinates survive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .params import ParamVector


@dataclass(frozen=True)
class SparsityConfig:
    sparsity: float = 0.0

    def __post_init__(self):
        if not 0 <= self.sparsity < 1:
            raise ConfigError("sparsity must lie in [0, 1)")

    def keep_count(self, layer_dim: int) -> int:
        # rounding first keeps e.g. (1 - 0.7) * 10 from ceiling to 4
        return max(1, math.ceil(round((1.0 - self.sparsity) * layer_dim, 9)))


def utility_cost(grad: ParamVector, update: ParamVector) -> ParamVector:
    return grad.like(np.abs(grad.hadamard(update).values))


def top_indices(costs: np.ndarray, keep: int) -> np.ndarray:
    """Indices of the ``keep`` largest costs; ties go to the lower index."""
    if keep >= costs.size:
        return np.arange(costs.size)
    return np.argsort(-costs, kind="stable")[:keep]


def build_mask(costs: ParamVector, cfg: SparsityConfig) -> ParamVector:
    mask = costs.zeros_like()
    for name, layer_costs in costs.layers():
        if layer_costs.size == 0:
            continue
        keep = cfg.keep_count(layer_costs.size)
        mask.layer(name)[top_indices(layer_costs, keep)] = 1.0
    return mask


def sparsify(update: ParamVector, mask: ParamVector) -> ParamVector:
    return update.hadamard(mask)

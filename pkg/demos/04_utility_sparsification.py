"""
Sparsifying an update by first-order utility
============================================

Each coordinate's cost is |grad * delta|, the first-order loss change from
dropping it. Per layer, the top max(1, ceil((1 - c) d)) coordinates survive.
"""

import numpy as np

from fedblur.lus import SparsityConfig, build_mask, sparsify, utility_cost
from fedblur.params import ParamVector

rng = np.random.default_rng(3)
layers = [("W0", rng.normal(size=12)), ("b0", rng.normal(size=4))]
delta = ParamVector.from_layers(layers)
grad = ParamVector.from_layers([(n, rng.normal(size=v.size)) for n, v in layers])

cost = utility_cost(grad, delta)
for c in (0.0, 0.3, 0.7, 0.9):
    cfg = SparsityConfig(c)
    mask = build_mask(cost, cfg)
    kept = sparsify(delta, mask)
    print(f"c={c}: keep {[cfg.keep_count(d) for d in (12, 4)]}, "
          f"norm ratio {kept.norm() / delta.norm():.3f}, "
          f"utility kept {np.sum(cost.values * mask.values) / cost.values.sum():.3f}")

# ties go to the lower index
print(build_mask(ParamVector.from_layers([("t", np.array([1.0, 2.0, 2.0, 1.0]))]), SparsityConfig(0.5)).values)

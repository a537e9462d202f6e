"""
Bounding local updates with a norm penalty
==========================================

The local objective gets a penalty (lam/2) * max(0, ||w - w_t||^2 - S^2).
Once the update leaves the S-ball each step is shrunk, and the final update
equals plain SGD with a per-step discount on the learning rate.
"""

import numpy as np

from fedblur.blur import discount_trace
from fedblur.data import AgentShard
from fedblur.federation import TrainConfig, local_update
from fedblur.nn import MlpModel

rng = np.random.default_rng(2)
X = rng.normal(size=(40, 5))
y = X @ rng.normal(size=(5, 1)) * 2 + 1
shard = AgentShard(0, X, y, np.arange(40))

# linear model with squared loss, so the local problem is a quadratic
model = MlpModel((5, 1), activation="identity", loss="mse")
model.init_params(seed=0)

S = 0.2
for lam in (0.0, 1.0, 4.0, 8.0):
    cfg = TrainConfig(local_lr=0.1, local_steps=30, batch_size=None, lam=lam)
    _, m = local_update(model, model.params, shard, cfg, S, 0.0, 1, 1)
    print(f"lam={lam:<4} update norm {m.raw_norm:.3f}  active steps {m.active_fraction:.2f}")

# discounts for an update that leaves the ball at step 3
norms = [0.0, 0.1, 0.18, 0.25, 0.3, 0.33]
print("discounts:", np.round(discount_trace(norms, S, 4.0, 0.1), 4))
print("indexed reading:", np.round(discount_trace(norms, S, 4.0, 0.1, reading="indexed"), 4))

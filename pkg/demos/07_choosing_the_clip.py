"""
Choosing the clipping threshold
===============================

S is picked by grid search for vanilla DP-FedAvg and then kept for the other
methods. Tuning uses seeds disjoint from the evaluation seeds (0-4). This is
how the default clip of 0.1 was chosen. Takes a couple of minutes.
"""

import sys

import numpy as np

from fedblur.config import ExperimentConfig
from fedblur.experiment import build
from fedblur.federation import run_experiment

GRID = (0.01, 0.03, 0.1, 0.3, 1.0)
TUNING_SEEDS = (100, 101, 102)
rounds = int(sys.argv[1]) if len(sys.argv) > 1 else 100

scores = {}
for S in GRID:
    accs = []
    for seed in TUNING_SEEDS:
        cfg = ExperimentConfig.from_dict({"seed": seed, "train": {"rounds": rounds}, "blur": {"lam": 0.0},
                                          "lus": {"sparsity": 0.0}, "dp": {"clip": S, "target_epsilon": 4.0}})
        model, shards, test, train_cfg, dp = build(cfg)
        accs.append(run_experiment(model, shards, train_cfg, dp, test).metrics[-1].test_accuracy)
    scores[S] = float(np.mean(accs))
    print(f"S={S}: mean accuracy {scores[S]:.3f}", flush=True)

print("chosen S:", max(scores, key=scores.get))

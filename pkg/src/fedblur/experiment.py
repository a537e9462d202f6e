"""Build and run an experiment from an :class:`ExperimentConfig`.

Also owns the on-disk layout of a run directory::

    config.json     resolved configuration
    manifest.json   seed, package version, config hash, resolved noise multiplier
    metrics.jsonl   one JSON object per round
    summary.json    final accuracy, epsilon spent, wall time
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from pathlib import Path

from . import __version__
from .config import ExperimentConfig
from .data import PartitionSpec, generate_synthetic, load_csv, partition, train_test_split
from .federation import TrainConfig, run_experiment
from .mechanism import DpConfig
from .nn import MlpModel


def config_hash(cfg: ExperimentConfig) -> str:
    raw = cfg.to_dict()
    raw["output_dir"] = None
    return hashlib.sha256(json.dumps(raw, sort_keys=True).encode()).hexdigest()


def build(cfg: ExperimentConfig):
    """Materialize ``(model, shards, test_set, train_config, dp_config)``."""
    data_cfg = cfg.data
    if data_cfg["source"] == "synthetic":
        full = generate_synthetic(data_cfg["classes"], data_cfg["dim"], data_cfg["per_class"],
                                  data_cfg["separation"], cfg.seed)
        train, test = train_test_split(full, data_cfg["test_fraction"], cfg.seed)
    else:
        train = load_csv(data_cfg["train"])
        if data_cfg.get("test"):
            test = load_csv(data_cfg["test"], n_features=train.X.shape[1])
            test.n_classes = train.n_classes = max(test.n_classes, train.n_classes)
        else:
            train, test = train_test_split(train, data_cfg["test_fraction"], cfg.seed)
    part = cfg.partition
    shards = partition(train, PartitionSpec(part["scheme"], part["alpha"], part["num_agents"], cfg.seed))
    sizes = (train.X.shape[1], *cfg.model["hidden"], train.n_classes)
    model = MlpModel(sizes, cfg.model["activation"], cfg.model["loss"])
    model.init_params(cfg.seed)
    t = cfg.train
    train_cfg = TrainConfig(
        local_lr=t["local_lr"], server_lr=t["server_lr"], local_steps=t["local_steps"], rounds=t["rounds"],
        batch_size=t["batch_size"], lam=cfg.blur["lam"], sparsity=cfg.lus["sparsity"], seed=cfg.seed,
    )
    dp = DpConfig(
        clip=cfg.clip, noise_multiplier=cfg.dp["noise_multiplier"], sample_prob=cfg.dp["sample_prob"],
        target_epsilon=cfg.dp["target_epsilon"], delta=cfg.delta,
    )
    return model, shards, test, train_cfg, dp


def _json_line(obj) -> str:
    return json.dumps(obj, allow_nan=False, separators=(",", ":"))


def run_to_dir(cfg: ExperimentConfig, out_dir) -> dict:
    """Run ``cfg`` and write the run directory; returns the summary dict."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model, shards, test, train_cfg, dp = build(cfg)
    (out / "config.json").write_text(cfg.dumps() + "\n")
    start = time.perf_counter()
    metrics_path = out / "metrics.jsonl"
    with metrics_path.open("w") as fh:
        result = run_experiment(model, shards, train_cfg, dp, test,
                                on_round=lambda row: fh.write(_json_line(row.to_dict()) + "\n"))
    wall = time.perf_counter() - start
    last = result.metrics[-1] if result.metrics else None
    eps = result.ledger.epsilon() if result.ledger.rounds else 0.0
    summary = {
        "final_accuracy": last.test_accuracy if last else (model.accuracy(test.X, test.y, result.params)
                                                           if model.loss == "cross_entropy" else None),
        "final_train_loss": last.train_loss if last else None,
        "epsilon": eps if math.isfinite(eps) else None,
        "delta": result.ledger.delta,
        "noise_multiplier": result.sigma,
        "rounds": train_cfg.rounds,
        "nonempty_rounds": result.ledger.rounds,
        "wall_time_s": round(wall, 3),
    }
    manifest = {
        "seed": cfg.seed,
        "version": __version__,
        "config_hash": config_hash(cfg),
        "noise_multiplier": result.sigma,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary

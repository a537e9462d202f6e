"""Experiment configuration: JSON schema, defaults, validation, round-trip.

A config file is a JSON object with these sections (all optional except
``dp``'s noise setting); unknown keys are rejected::

    {
      "seed": 0,
      "model":     {"hidden": [32], "activation": "relu", "loss": "cross_entropy"},
      "data":      {"source": "synthetic", "classes": 5, "dim": 20, "per_class": 300,
                    "separation": 3.0, "test_fraction": 0.2}
                 | {"source": "csv", "train": "train.csv", "test": "test.csv"},
      "partition": {"scheme": "dirichlet", "alpha": 0.5, "num_agents": 100},
      "train":     {"local_lr": 0.1, "server_lr": 1.0, "local_steps": 30, "rounds": 100,
                    "batch_size": 16},
      "dp":        {"clip": 0.1, "noise_multiplier": null, "target_epsilon": 4.0,
                    "sample_prob": 0.1, "delta": null},
      "blur":      {"lam": 0.4},
      "lus":       {"sparsity": 0.7},
      "output_dir": "runs/example"
    }

``delta: null`` means ``1 / num_agents``. ``clip`` may be the string
``"inf"`` to disable clipping.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .errors import ConfigError

DEFAULTS = {
    "seed": 0,
    "model": {"hidden": [32], "activation": "relu", "loss": "cross_entropy"},
    "data": {
        "source": "synthetic",
        "classes": 5,
        "dim": 20,
        "per_class": 300,
        "separation": 3.0,
        "test_fraction": 0.2,
    },
    "partition": {"scheme": "dirichlet", "alpha": 0.5, "num_agents": 100},
    "train": {"local_lr": 0.1, "server_lr": 1.0, "local_steps": 30, "rounds": 100, "batch_size": 16},
    "dp": {"clip": 0.1, "noise_multiplier": None, "target_epsilon": None, "sample_prob": 0.1, "delta": None},
    "blur": {"lam": 0.4},
    "lus": {"sparsity": 0.7},
    "output_dir": None,
}

_CSV_DATA_KEYS = {"source", "train", "test", "test_fraction"}


class ConfigValidationError(ConfigError):
    """Validation failure; ``errors`` maps dotted field names to messages."""

    def __init__(self, errors: dict):
        self.errors = errors
        super().__init__("; ".join(f"{k}: {v}" for k, v in errors.items()))


@dataclass
class ExperimentConfig:
    seed: int
    model: dict
    data: dict
    partition: dict
    train: dict
    dp: dict
    blur: dict
    lus: dict
    output_dir: Optional[str] = None

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigValidationError({"<root>": "config must be a JSON object"})
        errors = {}
        unknown = set(raw) - set(DEFAULTS)
        for key in sorted(unknown):
            errors[key] = "unknown field"
        merged = copy.deepcopy(DEFAULTS)
        for key, value in raw.items():
            if key in unknown:
                continue
            if isinstance(DEFAULTS[key], dict):
                if not isinstance(value, dict):
                    errors[key] = "must be an object"
                    continue
                if key == "data" and value.get("source") == "csv":
                    merged[key] = {"source": "csv", "test_fraction": DEFAULTS["data"]["test_fraction"]}
                    allowed = _CSV_DATA_KEYS
                else:
                    allowed = set(DEFAULTS[key])
                for sub in sorted(set(value) - allowed):
                    errors[f"{key}.{sub}"] = "unknown field"
                merged[key].update({k: v for k, v in value.items() if k in allowed})
            else:
                merged[key] = value
        cfg = cls(**merged)
        errors.update(cfg._validate())
        if errors:
            raise ConfigValidationError(errors)
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigValidationError({"<file>": f"no such file {path}"}) from None
        except json.JSONDecodeError as exc:
            raise ConfigValidationError({"<file>": f"invalid JSON: {exc}"}) from None
        cfg = cls.from_dict(raw)
        if cfg.data.get("source") == "csv":
            for key in ("train", "test"):
                if cfg.data.get(key) and not Path(cfg.data[key]).is_absolute():
                    cfg.data[key] = str((path.parent / cfg.data[key]).resolve())
        return cfg

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "model": copy.deepcopy(self.model),
            "data": copy.deepcopy(self.data),
            "partition": copy.deepcopy(self.partition),
            "train": copy.deepcopy(self.train),
            "dp": copy.deepcopy(self.dp),
            "blur": copy.deepcopy(self.blur),
            "lus": copy.deepcopy(self.lus),
            "output_dir": self.output_dir,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def replace(self, **dotted) -> "ExperimentConfig":
        """Copy with ``section.field=value`` overrides, re-validated."""
        raw = self.to_dict()
        for key, value in dotted.items():
            section, _, name = key.partition(".")
            if name:
                raw.setdefault(section, {})[name] = value
            else:
                raw[section] = value
        return ExperimentConfig.from_dict(raw)

    @property
    def clip(self) -> float:
        value = self.dp["clip"]
        return math.inf if value in ("inf", "Infinity") else float(value)

    @property
    def delta(self) -> float:
        d = self.dp.get("delta")
        return float(d) if d is not None else 1.0 / self.partition["num_agents"]

    def _validate(self) -> dict:
        e = {}

        def num(section, key, cond, message, allow_none=False):
            value = getattr(self, section)[key]
            if value is None and allow_none:
                return
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                e[f"{section}.{key}"] = "must be a number"
                return
            if not cond(value):
                e[f"{section}.{key}"] = message

        def integer(section, key, minimum, allow_none=False):
            value = getattr(self, section)[key]
            if value is None and allow_none:
                return
            if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
                e[f"{section}.{key}"] = f"must be an integer >= {minimum}"

        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            e["seed"] = "must be a non-negative integer"
        hidden = self.model.get("hidden")
        if not isinstance(hidden, list) or not all(isinstance(h, int) and h >= 1 for h in hidden):
            e["model.hidden"] = "must be a list of positive integers"
        if self.model.get("activation") not in ("relu", "identity"):
            e["model.activation"] = "must be 'relu' or 'identity'"
        if self.model.get("loss") not in ("cross_entropy", "mse"):
            e["model.loss"] = "must be 'cross_entropy' or 'mse'"

        source = self.data.get("source")
        if source == "synthetic":
            integer("data", "classes", 2)
            integer("data", "dim", 1)
            integer("data", "per_class", 1)
            num("data", "separation", lambda v: v >= 0, "must be >= 0")
            num("data", "test_fraction", lambda v: 0 < v < 1, "must lie in (0, 1)")
        elif source == "csv":
            if not isinstance(self.data.get("train"), str):
                e["data.train"] = "path to a CSV file is required"
            test = self.data.get("test")
            if test is not None and not isinstance(test, str):
                e["data.test"] = "must be a path or null"
            num("data", "test_fraction", lambda v: 0 < v < 1, "must lie in (0, 1)")
        else:
            e["data.source"] = "must be 'synthetic' or 'csv'"

        if self.partition.get("scheme") not in ("dirichlet", "iid", "by_label"):
            e["partition.scheme"] = "must be 'dirichlet', 'iid' or 'by_label'"
        num("partition", "alpha", lambda v: v > 0, "must be > 0")
        integer("partition", "num_agents", 1)

        num("train", "local_lr", lambda v: v > 0, "must be > 0")
        num("train", "server_lr", lambda v: v > 0, "must be > 0")
        integer("train", "local_steps", 1)
        integer("train", "rounds", 0)
        integer("train", "batch_size", 1, allow_none=True)

        clip = self.dp.get("clip")
        if clip not in ("inf", "Infinity"):
            num("dp", "clip", lambda v: v > 0, "must be > 0 (or \"inf\")")
        num("dp", "noise_multiplier", lambda v: v >= 0, "must be >= 0", allow_none=True)
        num("dp", "target_epsilon", lambda v: v > 0, "must be > 0", allow_none=True)
        num("dp", "sample_prob", lambda v: 0 < v <= 1, "must lie in (0, 1]")
        num("dp", "delta", lambda v: 0 < v < 1, "must lie in (0, 1)", allow_none=True)
        if (self.dp.get("noise_multiplier") is None) == (self.dp.get("target_epsilon") is None):
            e["dp"] = "set exactly one of noise_multiplier and target_epsilon"
        elif clip in ("inf", "Infinity") and (self.dp.get("target_epsilon") is not None or (self.dp.get("noise_multiplier") or 0) > 0):
            e["dp.clip"] = "noise requires a finite clip threshold"

        num("blur", "lam", lambda v: v >= 0, "must be >= 0")
        num("lus", "sparsity", lambda v: 0 <= v < 1, "must lie in [0, 1)")
        lam, lr = self.blur.get("lam"), self.train.get("local_lr")
        if "blur.lam" not in e and "train.local_lr" not in e and lam * lr >= 1:
            e["blur.lam"] = f"lambda * local_lr must be < 1 (got {lam} * {lr} = {lam * lr:g})"
        if self.output_dir is not None and not isinstance(self.output_dir, str):
            e["output_dir"] = "must be a string or null"
        return e

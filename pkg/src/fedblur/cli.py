"""Command-line entry point: ``fedblur run|calibrate|sweep|report``.

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration or arguments.
The output directory resolves as ``--out``, then ``$FEDBLUR_OUT``, then the
config's ``output_dir``, then ``./runs/<config-hash>``.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .accountant import calibrate_sigma
from .config import ConfigValidationError, ExperimentConfig
from .errors import CalibrationError, ConfigError, DataError, FedBlurError
from .experiment import config_hash, run_to_dir

log = logging.getLogger("fedblur")

OUT_ENV = "FEDBLUR_OUT"
AXIS_ALIASES = {"lam": "blur.lam", "lambda": "blur.lam", "c": "lus.sparsity", "sparsity": "lus.sparsity"}
REPORT_QUANTILES = (0.1, 0.25, 0.5, 0.75, 0.9)


class UsageError(Exception):
    pass


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    if args.out:
        return Path(args.out)
    if os.environ.get(OUT_ENV):
        return Path(os.environ[OUT_ENV])
    if cfg.output_dir:
        return Path(cfg.output_dir)
    return Path("runs") / config_hash(cfg)[:12]


def _load(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def cmd_run(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    summary = run_to_dir(cfg, out)
    if args.json:
        print(json.dumps({"out_dir": str(out), **summary}, sort_keys=True))
    else:
        acc = summary["final_accuracy"]
        eps = summary["epsilon"]
        print(f"run finished in {summary['wall_time_s']:.1f}s -> {out}")
        print(f"  final accuracy {acc:.4f}" if acc is not None else "  final accuracy n/a")
        print(f"  epsilon {eps:.4f} at delta {summary['delta']:.3g} (sigma {summary['noise_multiplier']:.4f})"
              if eps is not None else "  epsilon inf (no noise)")
    return 0


def cmd_calibrate(args) -> int:
    delta = args.delta
    if delta is None:
        if args.num_agents is None:
            raise UsageError("give --delta or --num-agents (delta defaults to 1/N)")
        delta = 1.0 / args.num_agents
    if not 0 < delta < 1 or not 0 < args.sample_prob <= 1 or args.rounds < 1 or not args.epsilon > 0:
        raise UsageError("need epsilon > 0, 0 < delta < 1, 0 < sample-prob <= 1, rounds >= 1")
    res = calibrate_sigma(args.epsilon, delta, args.rounds, args.sample_prob)
    if args.json:
        print(json.dumps({"sigma": res.sigma, "achieved_epsilon": res.achieved_epsilon,
                          "iterations": res.iterations, "target_epsilon": args.epsilon,
                          "delta": delta, "rounds": args.rounds, "sample_prob": args.sample_prob}))
    else:
        print(f"sigma = {res.sigma:.6f}  (achieved epsilon {res.achieved_epsilon:.6f} "
              f"after {res.iterations} bisection steps)")
    return 0


def parse_grid(specs) -> list[tuple[str, list]]:
    axes = []
    for spec in specs:
        key, sep, values = spec.partition("=")
        if not sep or not values:
            raise UsageError(f"bad --grid {spec!r}; expected key=v1,v2,...")
        key = AXIS_ALIASES.get(key.strip(), key.strip())
        if "." not in key:
            raise UsageError(f"grid key {key!r} must be section.field")
        parsed = []
        for v in values.split(","):
            try:
                parsed.append(json.loads(v))
            except json.JSONDecodeError:
                parsed.append(v)
        axes.append((key, parsed))
    return axes


def _is_baseline(cfg: ExperimentConfig) -> bool:
    return cfg.blur["lam"] == 0 and cfg.lus["sparsity"] == 0


def cmd_sweep(args) -> int:
    base = _load(args)
    axes = parse_grid(args.grid)
    if not axes:
        raise UsageError("sweep needs at least one --grid axis")
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [base.seed]
    out = _out_dir(args, base)
    out.mkdir(parents=True, exist_ok=True)
    keys = [k for k, _ in axes]
    cells = [dict(zip(keys, combo)) for combo in itertools.product(*[vals for _, vals in axes])]
    # validate every cell before spending compute
    resolved = [[base.replace(**cell, seed=s) for s in seeds] for cell in cells]
    if not any(_is_baseline(cfgs[0]) for cfgs in resolved):
        cell = {"blur.lam": 0.0, "lus.sparsity": 0.0}
        cells.append(cell)
        resolved.append([base.replace(**cell, seed=s) for s in seeds])
    columns = list(dict.fromkeys(keys + ["blur.lam", "lus.sparsity"]))

    rows = []
    for cell, cfgs in zip(cells, resolved):
        accs, epss = [], []
        for cfg in cfgs:
            h = config_hash(cfg)
            run_dir = out / h[:16]
            summary_path, manifest_path = run_dir / "summary.json", run_dir / "manifest.json"
            if summary_path.exists() and manifest_path.exists() and \
                    json.loads(manifest_path.read_text()).get("config_hash") == h:
                summary = json.loads(summary_path.read_text())
                log.info("skip completed cell %s seed %d", cell, cfg.seed)
            else:
                summary = run_to_dir(cfg, run_dir)
            accs.append(summary["final_accuracy"])
            epss.append(summary["epsilon"])
        resolved_dict = cfgs[0].to_dict()
        row = {k: resolved_dict[k.split(".")[0]][k.split(".")[1]] for k in columns}
        valid = [a for a in accs if a is not None]
        row.update({
            "seeds": len(cfgs),
            "mean_accuracy": float(np.mean(valid)) if valid else None,
            "std_accuracy": float(np.std(valid)) if valid else None,
            "epsilon": epss[0],
            "is_baseline": _is_baseline(cfgs[0]),
            "run_dirs": ";".join(config_hash(c)[:16] for c in cfgs),
        })
        rows.append(row)
    base_acc = next((r["mean_accuracy"] for r in rows if r["is_baseline"]), None)
    for r in rows:
        r["gain_vs_baseline"] = (r["mean_accuracy"] - base_acc
                                 if base_acc is not None and r["mean_accuracy"] is not None else None)
    table = out / "sweep.csv"
    with table.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    if args.json:
        print(json.dumps(rows))
    else:
        print(f"{len(rows)} cells -> {table}")
        for r in rows:
            flag = " (baseline)" if r["is_baseline"] else ""
            acc = "n/a" if r["mean_accuracy"] is None else f"{r['mean_accuracy']:.4f}"
            print(f"  lam={r['blur.lam']} c={r['lus.sparsity']}: accuracy {acc}{flag}")
    return 0


def _find_runs(root: Path) -> list[Path]:
    return sorted(p.parent for p in root.rglob("metrics.jsonl"))


def cmd_report(args) -> int:
    root = Path(args.metrics_dir)
    runs = _find_runs(root) if root.is_dir() else []
    if not runs:
        raise FileNotFoundError(f"no completed runs under {root}")
    out = Path(args.out) if args.out else root / "report.csv"
    qnames = [f"norm_q{int(q * 100):02d}" for q in REPORT_QUANTILES]
    fields = ["run", "round", "cohort_size", "skipped", *qnames, "clip_fraction", "alpha_bar",
              "mean_beta", "train_loss", "test_accuracy", "epsilon"]
    n_rows = 0
    with out.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for run in runs:
            name = str(run.relative_to(root)) if run != root else "."
            for line in (run / "metrics.jsonl").read_text().splitlines():
                row = json.loads(line)
                norms = row.get("preclip_norms") or []
                qs = np.quantile(norms, REPORT_QUANTILES) if norms else [None] * len(qnames)
                writer.writerow({
                    "run": name,
                    **{k: row.get(k) for k in ("round", "cohort_size", "skipped", "clip_fraction", "alpha_bar",
                                                "mean_beta", "train_loss", "test_accuracy", "epsilon")},
                    **{qn: (float(q) if q is not None else None) for qn, q in zip(qnames, qs)},
                })
                n_rows += 1
    print(f"{len(runs)} run(s), {n_rows} rows -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedblur", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="experiment config (JSON)")
            p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help=f"output directory (else ${OUT_ENV}, else config output_dir)")
        p.add_argument("--json", action="store_true", help="machine-readable output")

    p = sub.add_parser("run", help="run one experiment")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("calibrate", help="noise multiplier for a target (epsilon, delta)")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--delta", type=float)
    p.add_argument("--num-agents", type=int, help="sets delta = 1/N when --delta is absent")
    p.add_argument("--rounds", type=int, required=True)
    p.add_argument("--sample-prob", type=float, required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("sweep", help="grid over config fields with paired seeds")
    common(p)
    p.add_argument("--grid", action="append", default=[],
                   help="axis as key=v1,v2 (key: lam, c, or section.field); repeatable")
    p.add_argument("--seeds", help="comma-separated seeds shared by every cell")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="tabulate per-round metrics of finished runs as CSV")
    p.add_argument("metrics_dir")
    p.add_argument("--out", help="CSV path (default <metrics_dir>/report.csv)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigValidationError as exc:
        for name, message in exc.errors.items():
            print(f"config error: {name}: {message}", file=sys.stderr)
        return 2
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CalibrationError as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        return 1
    except (FedBlurError, DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

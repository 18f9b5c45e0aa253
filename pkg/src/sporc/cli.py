"""Command-line front end: ``sporc gen|run|eval|sweep --config FILE``.

Configs are flat ``key = value`` text files; ``#`` starts a comment. Every key is
optional and typed (see ``SCHEMA``). Problem presets fill in the settings used
by the bundled experiments, and explicit keys override them.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from importlib import metadata
from pathlib import Path

import numpy as np

from sporc.core import SplitSpec, read_dataset, write_dataset
from sporc.errors import ConfigError, PipelineError, SporcError

PROBLEMS = ("knapsack-l2", "knapsack-l1", "alloy", "toy1", "toy2")


def _floats(s):
    return tuple(float(v) for v in s.split(",") if v.strip())


def _ints(s):
    return tuple(int(v) for v in s.split(",") if v.strip())


def _strs(s):
    return tuple(v.strip() for v in s.split(",") if v.strip())


def _bool(s):
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_float(s):
    return None if s.strip().lower() in ("none", "") else float(s)


SCHEMA = {
    "problem": (str, "knapsack-l2"),
    "n": (int, 7500),
    "n_test": (int, 3000),
    "p": (int, 10),
    "d": (int, 5),
    "deg_c": (int, 4),
    "deg_a": (int, 4),
    "b": (float, 2.0),
    "budget": (str, "le"),
    "h": (_floats, (2.9, 7.1)),
    "upper": (_opt_float, 100.0),
    "alpha": (float, 0.2),
    "norm": (str, None),
    "split": (_floats, (0.25, 0.25, 0.40, 0.10)),
    "methods": (_strs, ("pto", "mse-O", "mse-T", "mse-IR", "spo-rc-plus-O", "spo-rc-plus-T", "spo-rc-plus-IR")),
    "lr": (float, None),
    "epochs": (int, 50),
    "batch_size": (int, 32),
    "adam_beta1": (float, 0.9),
    "adam_beta2": (float, 0.999),
    "adam_eps": (float, 1e-8),
    "early_stop_patience": (int, 5),
    "resolve_prob": (float, 1.0),
    "warm_start_mse": (_bool, True),
    "mse_method": (str, "lstsq"),
    "mse_lr": (float, None),
    "predictor_hidden": (int, 32),
    "predictor_epochs": (int, 50),
    "predictor_lr": (float, 1e-3),
    "kmm_target": (str, "fresh"),
    "kmm_B": (float, 1000.0),
    "kmm_epsilon": (_opt_float, None),
    "kmm_bandwidth": (float, 1.0),
    "eval_x_max": (_opt_float, None),
    "seeds": (_ints, (0,)),
    "out": (str, "results"),
    "sweep_key": (str, "deg_c"),
    "sweep_values": (_strs, ("2", "4", "6", "8")),
}

PRESETS = {
    "knapsack-l2": {"norm": "l2", "lr": 4e-3, "mse_lr": 1e-3},
    "knapsack-l1": {"norm": "l1", "lr": 5e-2, "mse_lr": 1e-2},
    "alloy": {"norm": "l2", "lr": 4e-2, "mse_lr": 1e-2},
    "toy1": {
        "norm": "l2", "lr": 4e-2, "mse_lr": 1e-2, "n": 1000, "predictor_hidden": 0,
        "methods": ("spo-rc-plus-O", "spo-rc-plus-T", "spo-rc-plus-IR"),
    },
    "toy2": {
        "norm": "l2", "lr": 4e-2, "mse_lr": 1e-2, "n": 1000, "alpha": 0.25,
        "predictor_hidden": 0, "predictor_epochs": 200, "predictor_lr": 1e-2,
        "kmm_bandwidth": 0.02, "eval_x_max": 0.5,
        "methods": ("spo-rc-plus-O", "spo-rc-plus-IR"),
    },
}

SWEEPABLE = ("deg_c", "resolve_prob", "alpha", "n", "kmm_bandwidth")


def parse_config_text(text):
    """Parse ``key = value`` lines into a raw dict of strings."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value
    return raw


def resolve_config(raw):
    """Typed config: schema defaults, then the problem preset, then explicit keys."""
    problem = raw.get("problem", SCHEMA["problem"][1])
    if problem not in PROBLEMS:
        raise ConfigError(f"problem: must be one of {', '.join(PROBLEMS)}, got {problem!r}")
    cfg = {k: default for k, (_, default) in SCHEMA.items()}
    cfg.update(PRESETS[problem])
    for key, value in raw.items():
        conv = SCHEMA[key][0]
        try:
            cfg[key] = conv(value)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from None
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    def need(cond, key, msg):
        if not cond:
            raise ConfigError(f"{key}: {msg} (got {cfg[key]!r})")

    need(0.0 < cfg["alpha"] < 1.0, "alpha", "must lie in (0, 1)")
    need(cfg["norm"] in ("l1", "l2"), "norm", "must be l1 or l2")
    need(len(cfg["seeds"]) > 0, "seeds", "must list at least one seed")
    need(cfg["n"] >= 4, "n", "must be >= 4")
    need(cfg["n_test"] >= 1, "n_test", "must be >= 1")
    need(0.0 <= cfg["resolve_prob"] <= 1.0, "resolve_prob", "must lie in [0, 1]")
    need(cfg["lr"] > 0, "lr", "must be positive")
    need(cfg["epochs"] >= 0, "epochs", "must be >= 0")
    need(cfg["budget"] in ("eq", "le"), "budget", "must be eq or le")
    need(cfg["kmm_target"] in ("fresh", "calibration"), "kmm_target", "must be fresh or calibration")
    need(cfg["mse_method"] in ("lstsq", "adam"), "mse_method", "must be lstsq or adam")
    need(len(cfg["split"]) == 4 and abs(sum(cfg["split"]) - 1.0) < 1e-9 and min(cfg["split"]) > 0,
         "split", "needs four positive fractions summing to 1")
    need(cfg["sweep_key"] in SWEEPABLE, "sweep_key", f"must be one of {', '.join(SWEEPABLE)}")
    from sporc.training import parse_method

    for tag in cfg["methods"]:
        try:
            parse_method(tag)
        except ValueError:
            raise ConfigError(f"methods: unknown method tag {tag!r}") from None


def config_digest(cfg):
    """SHA-256 of the canonical ``key=value`` listing of every resolved field."""
    lines = [f"{k}={json.dumps(cfg[k], sort_keys=True)}" for k in sorted(cfg)]
    return hashlib.sha256("\n".join(lines).encode()).hexdigest()


def load_config(path, seed=None, out=None):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    raw = parse_config_text(text)
    if seed is not None:
        raw["seeds"] = str(seed)
    if out is not None:
        raw["out"] = out
    return resolve_config(raw)


# ---------------------------------------------------------------------------
# building blocks from a resolved config


def build_problem(cfg):
    from sporc.solver import RobustProblem

    kind = cfg["problem"]
    if kind.startswith("knapsack"):
        return RobustProblem.knapsack(cfg["b"], cfg["budget"])
    if kind == "alloy":
        return RobustProblem.alloy(cfg["h"], cfg["upper"])
    if kind == "toy1":
        return RobustProblem.knapsack(20.0, "eq")
    return RobustProblem.capacity()


def generate(cfg, seed):
    """``(train_pool, test)`` for one seed, sharing the latent structure."""
    from sporc import datagen

    kind = cfg["problem"]
    if kind.startswith("knapsack"):
        spec = datagen.KnapsackGenSpec(n=cfg["n"], p=cfg["p"], d=cfg["d"], deg_c=cfg["deg_c"],
                                       deg_a=cfg["deg_a"], b=cfg["b"], seed=seed)
        return datagen.gen_with_test(datagen.gen_knapsack, spec, cfg["n_test"])
    if kind == "alloy":
        spec = datagen.AlloyGenSpec(n=cfg["n"], p=cfg["p"], d=cfg["d"], m=len(cfg["h"]),
                                    deg_c=cfg["deg_c"], h=cfg["h"], seed=seed)
        return datagen.gen_with_test(datagen.gen_alloy, spec, cfg["n_test"])
    variant = "toy1-reweight" if kind == "toy1" else "toy2-truncate"
    spec = datagen.ToyGenSpec(variant, n=cfg["n"], seed=seed)
    return datagen.gen_with_test(datagen.gen_toy, spec, cfg["n_test"])


def pipeline_config(cfg, seed):
    from sporc.training import PipelineConfig, TrainConfig

    train = TrainConfig(
        lr=cfg["lr"], epochs=cfg["epochs"], batch_size=cfg["batch_size"],
        adam_beta1=cfg["adam_beta1"], adam_beta2=cfg["adam_beta2"], adam_eps=cfg["adam_eps"],
        early_stop_patience=cfg["early_stop_patience"], resolve_prob=cfg["resolve_prob"],
        warm_start_mse=cfg["warm_start_mse"], seed=seed,
    )
    return PipelineConfig(
        problem=build_problem(cfg), alpha=cfg["alpha"], norm=cfg["norm"],
        split=SplitSpec(tuple(cfg["split"]), seed), methods=tuple(cfg["methods"]), train=train,
        mse_method=cfg["mse_method"], mse_lr=cfg["mse_lr"], predictor_hidden=cfg["predictor_hidden"],
        predictor_epochs=cfg["predictor_epochs"], predictor_lr=cfg["predictor_lr"],
        kmm_target=cfg["kmm_target"], kmm_B=cfg["kmm_B"], kmm_epsilon=cfg["kmm_epsilon"],
        kmm_bandwidth=cfg["kmm_bandwidth"],
        truncation="toy-removal" if cfg["problem"] == "toy1" else "conformal", seed=seed,
    )


def _restrict_test(cfg, test):
    if cfg["eval_x_max"] is None:
        return test
    keep = np.flatnonzero(test.x[:, 0] < cfg["eval_x_max"])
    if keep.size == 0:
        raise PipelineError("eval_x_max leaves no test samples")
    return test.subset(keep)


def run_job(cfg, seed, digest, out_dir):
    """One pipeline run; returns metric rows and writes logs and checkpoints."""
    from sporc.predictor import save_model
    from sporc.training import run_pipeline

    full, test = generate(cfg, seed)
    result = run_pipeline(full, pipeline_config(cfg, seed), _restrict_test(cfg, test), digest)
    run_dir = Path(out_dir) / "runs" / f"seed-{seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    for tag, log in result.logs.items():
        log.write_csv(run_dir / f"train-{tag}.csv")
    cal_path = run_dir / "calibrator.json"
    cal_path.write_text(json.dumps(result.cal.to_dict()), encoding="utf-8")
    for (method, variant), model in result.models.items():
        save_model(run_dir / f"model-{method}-{variant}.json", model)
    rows = []
    for rep in result.reports:
        rows.append({
            "seed": seed, "method": rep.method, "variant": rep.variant, "problem": cfg["problem"],
            "deg_c": cfg["deg_c"], "alpha": cfg["alpha"],
            "norm_spo_rc_test": f"{rep.norm_spo_rc_test:.6f}",
            "infeasible_pct": f"{rep.infeasible_pct:.6f}",
            "train_s": f"{rep.train_s:.3f}", "eval_s": f"{rep.eval_s:.3f}",
        })
    return rows


def _threads():
    raw = os.environ.get("SPORC_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"SPORC_THREADS must be an integer, got {raw!r}") from None


def _run_jobs(jobs, deterministic):
    """Run ``(cfg, seed, digest, out)`` jobs; results keep job order either way."""
    threads = 1 if deterministic else _threads()
    if threads <= 1 or len(jobs) <= 1:
        return [run_job(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
        return list(pool.map(run_job, *zip(*jobs)))


def _versions():
    out = {"python": platform.python_version()}
    for pkg in ("numpy", "scipy", "clarabel", "cvxopt", "artifact"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def _write_metrics(path, rows, deterministic):
    from sporc.evaluation import write_metrics_csv

    if deterministic:
        # wall-clock columns would break byte-identical reruns; they live in the manifest
        rows = [{**r, "train_s": "", "eval_s": ""} for r in rows]
    write_metrics_csv(path, rows)


def _write_figure_data(path, rows, x_key):
    cols = ["problem", "x_key", "x_value", "seed", "method", "variant", "metric", "value"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        wr.writeheader()
        for r in rows:
            for metric in ("norm_spo_rc_test", "infeasible_pct"):
                wr.writerow({
                    "problem": r["problem"], "x_key": x_key, "x_value": r["x_value"],
                    "seed": r["seed"], "method": r["method"], "variant": r["variant"],
                    "metric": metric, "value": r[metric],
                })


def _write_manifest(out, cfg, digest, rows, wall_s, extra=None):
    manifest = {
        "config": cfg,
        "config_digest": digest,
        "versions": _versions(),
        "wall_s": round(wall_s, 3),
        "timings": [
            {k: r[k] for k in ("seed", "method", "variant", "x_value", "train_s", "eval_s")} for r in rows
        ],
    }
    if extra:
        manifest.update(extra)
    (Path(out) / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")


# ---------------------------------------------------------------------------
# commands


def cmd_gen(cfg, args):
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    for seed in cfg["seeds"]:
        full, test = generate(cfg, seed)
        write_dataset(out / f"data-seed-{seed}.jsonl", full)
        write_dataset(out / f"test-seed-{seed}.jsonl", test)
        print(f"seed {seed}: wrote {full.n} training and {test.n} test samples to {out}")
    return 0


def _run_points(cfg, points, x_key, deterministic):
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    jobs, labels = [], []
    for x_value, point_cfg in points:
        digest = config_digest(point_cfg)
        point_out = out if x_value is None else out / f"{x_key}-{x_value}"
        for seed in point_cfg["seeds"]:
            jobs.append((point_cfg, seed, digest, str(point_out)))
            labels.append(x_value)
    results = _run_jobs(jobs, deterministic)
    rows = []
    for x_value, job_rows in zip(labels, results):
        for r in job_rows:
            rows.append({**r, "x_value": "" if x_value is None else x_value})
    _write_metrics(out / "metrics.csv", rows, deterministic)
    _write_figure_data(out / "figure-data.csv", rows, x_key)
    _write_manifest(out, cfg, config_digest(cfg), rows, time.perf_counter() - t0,
                    {"sweep": [p[0] for p in points] if x_key != "none" else None})
    for r in rows:
        label = f"{x_key}={r['x_value']} " if r["x_value"] != "" else ""
        print(f"{label}seed {r['seed']} {r['method']}-{r['variant']}: "
              f"NormSPORCTest {float(r['norm_spo_rc_test']):.3f}%  infeasible {float(r['infeasible_pct']):.2f}%")
    return 0


def cmd_run(cfg, args):
    return _run_points(cfg, [(None, cfg)], "none", args.deterministic)


def cmd_sweep(cfg, args):
    key = cfg["sweep_key"]
    conv = SCHEMA[key][0]
    points = []
    for value in cfg["sweep_values"]:
        try:
            point = {**cfg, key: conv(value)}
        except ValueError as exc:
            raise ConfigError(f"sweep_values: {exc}") from None
        validate_config(point)
        points.append((value, point))
    return _run_points(cfg, points, key, args.deterministic)


def cmd_eval(cfg, args):
    from sporc.conformal import ConformalCalibrator
    from sporc.evaluation import EvalContext, infeasibility_pct, norm_spo_rc_test
    from sporc.predictor import load_model

    if not (args.model and args.calibrator and args.data):
        raise ConfigError("eval needs --model, --calibrator and --data")
    try:
        model = load_model(args.model)
        cal = ConformalCalibrator.from_dict(json.loads(Path(args.calibrator).read_text(encoding="utf-8")),
                                            base_dir=Path(args.calibrator).parent)
        test = _restrict_test(cfg, read_dataset(args.data))
    except (OSError, ValueError, KeyError) as exc:
        raise PipelineError(f"cannot load evaluation inputs: {exc}") from exc
    problem = build_problem(cfg)
    ctx = EvalContext(test, cal, problem, use_uncertainty=not args.pto)
    metric = norm_spo_rc_test(model, test, cal, problem, context=ctx)
    infeas = infeasibility_pct(model, test, cal, problem, not args.pto, context=ctx)
    print(json.dumps({"n_test": test.n, "norm_spo_rc_test": metric, "infeasible_pct": infeas}))
    return 0


COMMANDS = {"gen": cmd_gen, "run": cmd_run, "eval": cmd_eval, "sweep": cmd_sweep}


def build_parser():
    ap = argparse.ArgumentParser(prog="sporc", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="key = value config file")
    ap.add_argument("--seed", type=int, help="run only this seed")
    ap.add_argument("--out", help="output directory (overrides the config)")
    ap.add_argument("--deterministic", action="store_true",
                    help="sequential jobs and timing-free metrics.csv")
    ap.add_argument("--model", help="eval: cost model checkpoint")
    ap.add_argument("--calibrator", help="eval: calibrator JSON written by run")
    ap.add_argument("--data", help="eval: JSON-lines test dataset")
    ap.add_argument("--pto", action="store_true", help="eval: drop the uncertainty sets")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed, args.out)
        if os.environ.get("SPORC_THREADS") == "1":
            args.deterministic = True
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except PipelineError as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return 1
    except (SporcError, ArithmeticError, RuntimeError, ValueError) as exc:
        print(f"pipeline error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

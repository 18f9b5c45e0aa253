"""Weighted SPO-RC+ training with solution caching, and the end-to-end pipeline."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from sporc.conformal import calibrate, uncertainty_sets_batch
from sporc.core import SplitSpec, four_way_split, make_rng
from sporc.errors import DimMismatch, Divergence, InfeasibleError
from sporc.optim import Adam
from sporc.predictor import LinearCostModel, fit_constraint_predictor, fit_mse_baseline
from sporc.reweighting import ImportanceWeights, kmm_weights, truncate
from sporc.solver import FEAS_TOL, CompiledProblem, Solution, Status, compile_problem


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-2
    epochs: int = 50
    batch_size: int = 32
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    early_stop_patience: int = 5
    resolve_prob: float = 1.0
    warm_start_mse: bool = True
    seed: int = 0
    val_fraction: float = 0.1
    intercept: bool = True

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.resolve_prob <= 1.0:
            raise ValueError(f"resolve_prob must lie in [0, 1], got {self.resolve_prob}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")


class SolutionCache:
    """Per-instance pools of decisions already known to be robust-feasible."""

    def __init__(self):
        self._pools = {}
        self.solves = 0
        self.hits = 0

    def __contains__(self, key):
        return key in self._pools

    def __len__(self):
        return len(self._pools)

    def keys(self):
        return self._pools.keys()

    def pool(self, key):
        return self._pools[key]

    def add(self, key, w):
        w = np.asarray(w, float)
        pool = self._pools.get(key)
        if pool is None:
            self._pools[key] = w[None, :].copy()
        elif not np.any(np.all(np.abs(pool - w) <= 1e-9, axis=1)):
            self._pools[key] = np.vstack([pool, w])

    def best(self, key, problem, c):
        """Cached decision minimizing the oriented objective ``sign * c^T w``."""
        pool = self._pools[key]
        vals = problem.sign * (pool @ np.asarray(c, float))
        j = int(np.argmin(vals))
        w = pool[j]
        return Solution(w.copy(), float(c @ w), Status.OPTIMAL)


def cached_solve(cache, instance_id, problem, objective_c, U, resolve_prob, rng):
    """Re-solve with probability ``resolve_prob``, otherwise answer from the cache."""
    if instance_id not in cache:
        raise KeyError(f"no cache entry for instance {instance_id!r}")
    if resolve_prob >= 1.0 or rng.random() < resolve_prob:
        compiled = U if isinstance(U, CompiledProblem) else compile_problem(problem, U)
        sol = compiled.solve(objective_c)
        cache.solves += 1
        if sol.ok:
            cache.add(instance_id, sol.w)
        return sol
    cache.hits += 1
    return cache.best(instance_id, problem, objective_c)


@dataclass
class TrainLog:
    """Per-epoch records of one training run.

    Epoch 0 holds the exact weighted loss of the initial model; later
    ``train_loss`` values are running averages over the epoch's mini-batches.
    ``final_train_loss`` is the exact weighted loss of the returned model on
    the same training indices as epoch 0, and ``best_epoch`` the epoch it
    comes from.
    """

    rows: list = field(default_factory=list)
    skipped: int = 0
    best_epoch: int = 0
    final_train_loss: float = math.nan

    def write_csv(self, path):
        cols = ["epoch", "train_loss", "val_loss", "solves", "cache_hits", "wall_ms"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
            wr.writeheader()
            for r in self.rows:
                wr.writerow({k: r[k] for k in cols})

    @property
    def train_losses(self):
        return [r["train_loss"] for r in self.rows]


def _normalized_beta(beta, n):
    if beta is None:
        return np.ones(n)
    b = beta.beta if isinstance(beta, ImportanceWeights) else np.asarray(beta, float)
    if b.shape != (n,):
        raise DimMismatch(f"{b.size} weights for {n} samples")
    if np.any(b < 0) or not np.all(np.isfinite(b)) or b.sum() <= 0:
        raise ValueError("importance weights must be finite, nonnegative and not all zero")
    if np.all(b == b[0]):
        # avoid rounding in b / mean(b) so equal weights reproduce the unweighted run
        return np.ones(n)
    return b / b.mean()


def train_spo_rc_plus(trunc, beta, cal, problem, cfg=None, log=None, init=None):
    """Minimize the weighted empirical cost+ over linear cost models.

    Parameters
    ----------
    trunc : Dataset
        Training samples (typically the truncated part).
    beta : ImportanceWeights, array or None
        Per-sample weights; normalized to mean one, ``None`` means uniform.
    cal : ConformalCalibrator
        Supplies each sample's uncertainty set.
    problem : RobustProblem
    cfg : TrainConfig
    log : TrainLog, optional
        Receives one row per epoch (row 0 is the starting model).
    init : LinearCostModel, optional
        Starting point; overrides the MSE warm start.

    Returns
    -------
    LinearCostModel
        The iterate with the best validation cost+.
    """
    cfg = cfg or TrainConfig()
    log = log if log is not None else TrainLog()
    n = trunc.n
    if n < 1:
        raise ValueError("need at least one training sample")
    weights = _normalized_beta(beta, n)
    s = problem.sign
    X, C = trunc.x, trunc.c

    # fixed term w*(c_i, U_i): solved once, also seeds the cache
    compiled = [compile_problem(problem, U) for U in uncertainty_sets_batch(cal, X)]
    cache = SolutionCache()
    w_true = [None] * n
    for i, cp in enumerate(compiled):
        sol = cp.solve(C[i])
        if sol.ok:
            w_true[i] = sol.w
            cache.add(i, sol.w)
    usable = np.array([w is not None for w in w_true])
    log.skipped = int(n - usable.sum())
    idx = np.flatnonzero(usable)
    if idx.size == 0:
        raise InfeasibleError("every training sample has an infeasible robust problem")

    rng = make_rng(cfg.seed, "spo_rc_plus")
    cache_rng = make_rng(cfg.seed, "spo_rc_plus", "cache")
    perm = rng.permutation(idx)
    n_val = int(round(cfg.val_fraction * perm.size)) if perm.size >= 10 else 0
    val_idx, tr_idx = np.sort(perm[:n_val]), perm[n_val:]

    if init is not None:
        model = init.copy()
    elif cfg.warm_start_mse:
        model = fit_mse_baseline(trunc.subset(tr_idx), weights=weights[tr_idx], intercept=cfg.intercept)
    else:
        model = LinearCostModel(np.zeros((C.shape[1], X.shape[1])), np.zeros(C.shape[1]) if cfg.intercept else None)
    if cfg.intercept and model.intercept is None:
        model = LinearCostModel(model.B, np.zeros(model.d))
    B = model.B.copy()
    b0 = model.intercept.copy() if cfg.intercept else None
    params = [B, b0] if cfg.intercept else [B]

    opt = Adam(params, lr=cfg.lr, beta1=cfg.adam_beta1, beta2=cfg.adam_beta2, eps=cfg.adam_eps)
    counters = {"solves": n, "hits": 0}

    def chat(i):
        v = B @ X[i]
        return v + b0 if b0 is not None else v

    def exact_cost_plus(i):
        ch = chat(i)
        sol = compiled[i].solve(2.0 * ch - C[i])
        counters["solves"] += 1
        if not sol.ok:
            return math.nan
        return s * float((C[i] - 2.0 * ch) @ sol.w) + 2.0 * s * float(ch @ w_true[i])

    def weighted_loss(ids):
        if ids.size == 0:
            return math.nan
        vals = np.array([exact_cost_plus(i) for i in ids])
        ok = np.isfinite(vals)
        if not ok.any():
            return math.nan
        return float(np.sum(weights[ids][ok] * vals[ok]) / np.sum(weights[ids][ok]))

    def snapshot():
        return LinearCostModel(B.copy(), None if b0 is None else b0.copy())

    solves_seen = 0
    t0 = time.perf_counter()
    train_loss = weighted_loss(tr_idx)
    val_loss = weighted_loss(val_idx) if val_idx.size else train_loss
    if not math.isfinite(train_loss):
        raise Divergence("initial training loss is not finite")
    log.rows.append(_log_row(0, train_loss, val_loss, counters, t0))
    best, best_val, stale = snapshot(), val_loss, 0
    best_epoch = 0

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(tr_idx)
        total, wsum = 0.0, 0.0
        for start in range(0, order.size, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            CH = X[batch] @ B.T
            if b0 is not None:
                CH += b0
            G = np.zeros((batch.size, B.shape[0]))
            for k, i in enumerate(batch):
                ch = CH[k]
                sol = cached_solve(cache, i, problem, 2.0 * ch - C[i], compiled[i], cfg.resolve_prob, cache_rng)
                if not sol.ok:
                    log.skipped += 1
                    continue
                w_anti = sol.w
                total += weights[i] * (s * float((C[i] - 2.0 * ch) @ w_anti) + 2.0 * s * float(ch @ w_true[i]))
                wsum += weights[i]
                G[k] = (2.0 * s * weights[i]) * (w_true[i] - w_anti)
            gB, gb = G.T @ X[batch], G.sum(axis=0)
            m = batch.size
            grads = [gB / m, gb / m] if b0 is not None else [gB / m]
            opt.step(grads)
            if not np.all(np.isfinite(B)):
                raise Divergence("cost model parameters became non-finite")
        counters["solves"] += cache.solves - solves_seen
        solves_seen = cache.solves
        counters["hits"] = cache.hits
        train_loss = total / wsum if wsum > 0 else math.nan
        if not math.isfinite(train_loss):
            raise Divergence(f"training loss is not finite at epoch {epoch}")
        if val_idx.size:
            val_loss = weighted_loss(val_idx)
        else:
            val_loss = train_loss
        log.rows.append(_log_row(epoch, train_loss, val_loss, counters, t0))
        if val_loss < best_val - 1e-12:
            best, best_val, stale = snapshot(), val_loss, 0
            best_epoch = epoch
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                break
    if not math.isfinite(best_val):
        best, best_epoch = snapshot(), len(log.rows) - 1
    log.best_epoch = best_epoch
    if best_epoch == 0:
        log.final_train_loss = log.rows[0]["train_loss"]
    else:
        B[...] = best.B
        if b0 is not None:
            b0[...] = best.intercept
        log.final_train_loss = weighted_loss(tr_idx)
    _spot_check(cache, compiled, problem)
    return best


def _log_row(epoch, train_loss, val_loss, counters, t0):
    return {
        "epoch": epoch,
        "train_loss": train_loss,
        "val_loss": val_loss,
        "solves": counters["solves"],
        "cache_hits": counters["hits"],
        "wall_ms": round(1000.0 * (time.perf_counter() - t0), 3),
    }


def _spot_check(cache, compiled, problem, k=5):
    for key in list(cache.keys())[:k]:
        for w in cache.pool(key):
            if not compiled[key].contains(w, FEAS_TOL):
                raise AssertionError(f"cached decision for instance {key} is not robust-feasible")


# ---------------------------------------------------------------------------
# end-to-end pipeline

VARIANTS = ("O", "T", "IR")
BASE_METHODS = ("mse", "spo-rc-plus")


def parse_method(tag):
    """``"pto"`` or ``"<mse|spo-rc-plus>-<O|T|IR>"`` -> ``(method, variant)``."""
    if tag == "pto":
        return "pto", "O"
    method, _, variant = tag.rpartition("-")
    if method not in BASE_METHODS or variant not in VARIANTS:
        raise ValueError(f"unknown method tag {tag!r}")
    return method, variant


@dataclass(frozen=True)
class PipelineConfig:
    problem: object
    alpha: float = 0.2
    norm: str = "l2"
    split: SplitSpec = SplitSpec()
    methods: tuple = ("pto", "mse-IR", "spo-rc-plus-IR")
    train: TrainConfig = TrainConfig()
    mse_method: str = "lstsq"
    mse_lr: float = 1e-2
    predictor_hidden: int = 32
    predictor_epochs: int = 50
    predictor_lr: float = 1e-3
    kmm_target: str = "fresh"
    kmm_B: float = 1000.0
    kmm_epsilon: float | None = None
    kmm_bandwidth: float = 1.0
    truncation: str = "conformal"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.kmm_target not in ("fresh", "calibration"):
            raise ValueError(f"kmm_target must be 'fresh' or 'calibration', got {self.kmm_target!r}")
        if self.truncation not in ("conformal", "toy-removal"):
            raise ValueError(f"unknown truncation {self.truncation!r}")
        for tag in self.methods:
            parse_method(tag)


@dataclass
class PipelineResult:
    models: dict
    reports: list
    cal: object
    kept: np.ndarray
    weights: ImportanceWeights | None
    parts: tuple
    logs: dict
    timings: dict

    def report(self, tag):
        method, variant = parse_method(tag)
        for r in self.reports:
            if r.method == method and r.variant == variant:
                return r
        raise KeyError(tag)


def run_pipeline(full, cfg, test=None, config_digest=""):
    """Split, calibrate, truncate, reweight and train every requested method.

    Parameters
    ----------
    full : Dataset
        Data that is split four ways (predictor fit, calibration, training,
        KMM target).
    cfg : PipelineConfig
    test : Dataset, optional
        When given, every trained model is scored and reported.

    Returns
    -------
    PipelineResult
    """
    from dataclasses import replace

    from sporc.datagen import toy_removal_mask
    from sporc.evaluation import EvalContext, ExperimentReport, infeasibility_pct, norm_spo_rc_test

    if full.n < 4:
        raise ValueError("need at least four samples to split")
    problem = cfg.problem
    parts = four_way_split(full, replace(cfg.split, seed=cfg.seed))
    fit_part, calib_part, train_part, target_part = parts
    timings = {}

    t = time.perf_counter()
    g = fit_constraint_predictor(
        fit_part, hidden=cfg.predictor_hidden, epochs=cfg.predictor_epochs,
        lr=cfg.predictor_lr, seed=cfg.seed,
    )
    cal = calibrate(g, calib_part, cfg.alpha, cfg.norm)
    if cfg.truncation == "conformal":
        kept, trunc = truncate(train_part, cal)
    else:
        kept = np.flatnonzero(toy_removal_mask(train_part, cfg.seed))
        trunc = train_part.subset(kept)
    timings["calibrate_s"] = time.perf_counter() - t

    variants = {parse_method(tag)[1] for tag in cfg.methods}
    weights = None
    if "IR" in variants:
        t = time.perf_counter()
        target = target_part if cfg.kmm_target == "fresh" else calib_part
        weights = kmm_weights(trunc.x, target.x, cfg.kmm_B, cfg.kmm_epsilon, cfg.kmm_bandwidth)
        timings["kmm_s"] = time.perf_counter() - t

    data_for = {"O": (train_part, None), "T": (trunc, None), "IR": (trunc, weights)}
    train_cfg = replace(cfg.train, seed=cfg.seed)
    models, logs, train_s = {}, {}, {}
    for tag in cfg.methods:
        method, variant = parse_method(tag)
        data, beta = data_for[variant]
        t = time.perf_counter()
        if method in ("mse", "pto"):
            key = ("mse", variant)
            if key not in models:
                w = None if beta is None else beta.beta
                models[key] = fit_mse_baseline(
                    data, weights=w, method=cfg.mse_method, lr=cfg.mse_lr,
                    seed=cfg.seed, intercept=train_cfg.intercept,
                )
            models[(method, variant)] = models[key]
        else:
            log = TrainLog()
            models[(method, variant)] = train_spo_rc_plus(data, beta, cal, problem, train_cfg, log)
            logs[tag] = log
        train_s[tag] = time.perf_counter() - t

    reports = []
    if test is not None:
        contexts = {}
        for tag in cfg.methods:
            method, variant = parse_method(tag)
            robust = method != "pto"
            t = time.perf_counter()
            if robust not in contexts:
                contexts[robust] = EvalContext(test, cal, problem, use_uncertainty=robust)
            ctx = contexts[robust]
            model = models[(method, variant)]
            metric = norm_spo_rc_test(model, test, cal, problem, context=ctx)
            infeas = infeasibility_pct(model, test, cal, problem, robust, context=ctx)
            eval_s = time.perf_counter() - t
            reports.append(ExperimentReport(
                method=method, variant=variant, norm_spo_rc_test=metric,
                infeasible_pct=infeas, n_test=test.n, wall_s=train_s[tag] + eval_s,
                seed=cfg.seed, config_digest=config_digest,
                train_s=train_s[tag], eval_s=eval_s,
            ))
    return PipelineResult(models, reports, cal, kept, weights, parts, logs, timings)

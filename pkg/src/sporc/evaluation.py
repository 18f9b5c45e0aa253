"""Test-time metrics: normalized regret, infeasibility rate and toy region regrets."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass

import numpy as np

from sporc.conformal import uncertainty_sets_batch
from sporc.errors import InfeasibleError
from sporc.losses import delta_bound, CostBox
from sporc.solver import BallUncertainty, check_feasible, compile_problem, solve_singleton

METRIC_COLUMNS = [
    "seed", "method", "variant", "problem", "deg_c", "alpha",
    "norm_spo_rc_test", "infeasible_pct", "train_s", "eval_s",
]


@dataclass
class ExperimentReport:
    method: str
    variant: str
    norm_spo_rc_test: float
    infeasible_pct: float
    n_test: int
    wall_s: float = 0.0
    seed: int = 0
    config_digest: str = ""
    train_s: float = 0.0
    eval_s: float = 0.0

    def __post_init__(self):
        if self.n_test <= 0:
            raise ValueError("n_test must be positive")
        if not 0.0 <= self.infeasible_pct <= 100.0:
            raise ValueError(f"infeasible_pct out of range: {self.infeasible_pct}")

    def to_dict(self):
        return asdict(self)


def write_metrics_csv(path, rows):
    """Write dict rows with the standard metric columns (extra keys are ignored)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS, extrasaction="ignore", lineterminator="\n")
        wr.writeheader()
        for r in rows:
            wr.writerow(r)


class EvalContext:
    """Test set with its compiled robust problems and hindsight optima.

    Building the context once lets several models be scored against the same
    test samples without recompiling anything.

    Parameters
    ----------
    test : Dataset
    cal : ConformalCalibrator
    problem : RobustProblem
    use_uncertainty : bool
        ``False`` replaces every set by the point prediction (radius 0), which
        is the plain predict-then-optimize baseline.
    """

    def __init__(self, test, cal, problem, use_uncertainty=True):
        if test.n < 1:
            raise ValueError("need at least one test sample")
        self.test = test
        self.cal = cal
        self.problem = problem
        self.use_uncertainty = use_uncertainty
        sets = uncertainty_sets_batch(cal, test.x)
        if not use_uncertainty:
            sets = [[BallUncertainty(b.center, 0.0, b.norm) for b in U] for U in sets]
        self.sets = sets
        self.compiled = [compile_problem(problem, U) for U in sets]
        opt = np.empty(test.n)
        for i in range(test.n):
            sol = solve_singleton(problem, test.c[i], test.a[i])
            if not sol.ok:
                raise InfeasibleError(f"hindsight problem of test sample {i} is {sol.status.value}")
            opt[i] = problem.sign * float(test.c[i] @ sol.w)
        self.opt = opt
        self.covered = cal.covered(test) if use_uncertainty else np.zeros(test.n, dtype=bool)

    @property
    def n(self):
        return self.test.n

    def decisions(self, model):
        C_hat = model.predict_batch(self.test.x)
        return [cp.solve(C_hat[i]) for i, cp in enumerate(self.compiled)]

    def per_sample(self, model, convention="penalty", delta=None):
        """Per-sample losses and a feasibility mask.

        ``convention="penalty"`` charges ``|opt_i|`` for any induced decision that
        violates the true constraints; ``convention="delta"`` charges ``delta``
        whenever the true parameter lies outside the set (or the robust problem
        has no solution).
        """
        if convention not in ("penalty", "delta"):
            raise ValueError(f"unknown convention {convention!r}")
        if convention == "delta" and delta is None:
            delta = delta_bound(self.problem, CostBox.from_costs(self.test.c))
        sols = self.decisions(model)
        losses = np.empty(self.n)
        feasible = np.zeros(self.n, dtype=bool)
        s = self.problem.sign
        for i, sol in enumerate(sols):
            feasible[i] = sol.ok and check_feasible(self.problem, sol.w, self.test.a[i])
            if convention == "delta" and (not self.covered[i] or not sol.ok):
                losses[i] = delta
            elif not feasible[i]:
                losses[i] = abs(self.opt[i])
            else:
                losses[i] = s * float(self.test.c[i] @ sol.w) - self.opt[i]
        return losses, feasible


def _ratio(losses, opt, weights, mask):
    w = np.ones(losses.size) if weights is None else np.asarray(weights, float)
    if mask is not None:
        w = w * np.asarray(mask, bool)
    den = float(np.sum(w * np.abs(opt)))
    if den <= 0:
        return math.nan
    return 100.0 * float(np.sum(w * losses)) / den


def norm_spo_rc_test(model, test, cal, problem, convention="penalty", delta=None,
                     weights=None, mask=None, context=None):
    """Normalized regret in percent: ``100 * sum(loss_i) / sum(|opt_i|)``."""
    ctx = context if context is not None else EvalContext(test, cal, problem)
    losses, _ = ctx.per_sample(model, convention, delta)
    return _ratio(losses, ctx.opt, weights, mask)


def infeasibility_pct(model, test, cal, problem, use_uncertainty=True, context=None):
    """Percentage of test samples whose induced decision violates the true constraints."""
    ctx = context if context is not None else EvalContext(test, cal, problem, use_uncertainty)
    sols = ctx.decisions(model)
    bad = sum(not check_feasible(problem, sol.w, ctx.test.a[i]) for i, sol in enumerate(sols))
    return 100.0 * bad / ctx.n


def toy_regions(x, boundaries):
    """Boolean masks for A = [-1, b1], B = (b1, b2], C = (b2, 1]."""
    x = np.asarray(x, float).reshape(-1)
    b1, b2 = boundaries
    return x <= b1, (x > b1) & (x <= b2), x > b2


def region_regret(model, toy_test, boundaries, cal, problem, normalization="region", context=None):
    """Normalized regret restricted to each of the three toy regions.

    ``normalization="region"`` divides by the region's own ``sum |opt|``;
    ``"global"`` divides by the whole test set's, so the three values add up to
    the overall metric.
    """
    ctx = context if context is not None else EvalContext(toy_test, cal, problem)
    losses, _ = ctx.per_sample(model)
    masks = toy_regions(toy_test.x[:, 0], boundaries)
    if normalization == "region":
        return tuple(_ratio(losses, ctx.opt, None, m) for m in masks)
    if normalization == "global":
        den = float(np.sum(np.abs(ctx.opt)))
        return tuple(100.0 * float(np.sum(losses[m])) / den for m in masks)
    raise ValueError(f"unknown normalization {normalization!r}")


def flip_cost(dataset, boundaries, mean_costs, weights=None):
    """Cost of choosing the wrong item in each toy region, on a (weighted) sample.

    For every sample the reference decision picks the item with the larger
    conditional mean ``mean_costs(x)``; inside region X that decision is flipped.
    The realized regret of the flipped decision against the hindsight choice,
    summed over X and divided by the sample's total ``sum |max_k c_k|``, gives
    ``R_X`` in percent. The region with the smallest value is the one a single
    threshold rule should sacrifice.
    """
    x = dataset.x[:, 0]
    c = dataset.c
    w = np.ones(dataset.n) if weights is None else np.asarray(weights, float)
    mu = mean_costs(x)
    ref = np.argmax(mu, axis=1)
    flipped = 1 - ref
    best = c.max(axis=1)
    regret = best - c[np.arange(dataset.n), flipped]
    den = float(np.sum(w * np.abs(best)))
    return tuple(
        100.0 * float(np.sum(w[m] * regret[m])) / den for m in toy_regions(x, boundaries)
    )

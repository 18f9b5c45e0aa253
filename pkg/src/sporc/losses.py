"""cost, cost+, SPO-RC and SPO-RC+ losses.

All values are reported in minimization orientation: for the maximization
families (knapsack, capacity) the realized cost of a decision ``w`` is ``-c^T w``.
With that convention ``cost <= cost+`` holds for every family. Cost vectors
``c_hat`` and ``c`` are always passed in their native orientation.

Every function accepts either a list of :class:`~sporc.solver.BallUncertainty`
or an already compiled :class:`~sporc.solver.CompiledProblem` as ``U``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from sporc.errors import InfeasibleError
from sporc.solver import CompiledProblem, compile_problem, solve_singleton

MEMBERSHIP_TOL = 1e-9


def as_compiled(problem, U):
    if isinstance(U, CompiledProblem):
        return U
    return compile_problem(problem, U)


def _solve(compiled, c, what):
    sol = compiled.solve(c)
    if not sol.ok:
        raise InfeasibleError(f"{what} solve returned {sol.status.value}")
    return sol.w


def realized_cost(problem, c, w):
    return problem.sign * float(np.asarray(c, float) @ w)


def cost_metric(c_hat, c, U, problem):
    """Realized cost of the decision induced by ``c_hat``."""
    compiled = as_compiled(problem, U)
    w = _solve(compiled, c_hat, "prediction")
    return realized_cost(problem, c, w)


def cost_plus_parts(c_hat, c, U, problem, w_c=None):
    """``(cost+, w*(c, U), w*(2 c_hat - c, U))``; pass ``w_c`` to skip the fixed solve."""
    compiled = as_compiled(problem, U)
    c_hat = np.asarray(c_hat, float)
    c = np.asarray(c, float)
    if w_c is None:
        w_c = _solve(compiled, c, "true-cost")
    w_anti = _solve(compiled, 2.0 * c_hat - c, "surrogate")
    s = problem.sign
    value = s * float((c - 2.0 * c_hat) @ w_anti) + 2.0 * s * float(c_hat @ w_c)
    return value, w_c, w_anti


def cost_plus(c_hat, c, U, problem):
    return cost_plus_parts(c_hat, c, U, problem)[0]


def subgrad_cost_plus(c_hat, c, U, problem):
    """Subgradient of cost+ with respect to the native ``c_hat``."""
    _, w_c, w_anti = cost_plus_parts(c_hat, c, U, problem)
    return 2.0 * problem.sign * (w_c - w_anti)


@dataclass(frozen=True)
class CostBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, float)
        hi = np.asarray(self.upper, float)
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ValueError("CostBox needs lower <= upper with equal shapes")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def from_costs(cls, C, margin=0.1):
        C = np.atleast_2d(np.asarray(C, float))
        lo, hi = C.min(axis=0), C.max(axis=0)
        pad = margin * (hi - lo)
        return cls(lo - pad, hi + pad)

    @property
    def max_abs(self):
        return float(np.max(np.maximum(np.abs(self.lower), np.abs(self.upper)))) if self.lower.size else 0.0


def max_l1_radius(problem, d):
    """``max_{w in S} ||w||_1`` for the fixed constraints of the family."""
    if problem.family in ("knapsack", "capacity"):
        return 1.0
    return math.inf if problem.upper is None else d * float(problem.upper)


def delta_bound(problem, box):
    """Hölder upper bound ``2 * max|c_i| * max ||w||_1`` on the objective spread over S."""
    m = box.max_abs
    if m == 0.0:
        return 0.0
    return 2.0 * m * max_l1_radius(problem, box.lower.size)


def in_uncertainty(a_true, sets, tol=MEMBERSHIP_TOL):
    a_true = np.atleast_2d(np.asarray(a_true, float))
    return all(ball.contains(row, tol) for ball, row in zip(sets, a_true))


def hindsight_cost(problem, c, a_true):
    """``c^T w*(c, delta_a)`` in minimization orientation."""
    sol = solve_singleton(problem, c, a_true)
    if not sol.ok:
        raise InfeasibleError(f"hindsight solve returned {sol.status.value}")
    return realized_cost(problem, c, sol.w)


def _sets_of(U):
    return U.sets if isinstance(U, CompiledProblem) else list(U)


def spo_rc_loss(c_hat, c, a_true, U, problem, delta, hindsight=None):
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    if not in_uncertainty(a_true, _sets_of(U)):
        return float(delta)
    opt = hindsight_cost(problem, c, a_true) if hindsight is None else hindsight
    return cost_metric(c_hat, c, U, problem) - opt


def spo_rc_plus_loss(c_hat, c, a_true, U, problem, hindsight=None):
    opt = hindsight_cost(problem, c, a_true) if hindsight is None else hindsight
    return cost_plus(c_hat, c, U, problem) - opt

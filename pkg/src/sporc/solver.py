"""Robust counterparts of the knapsack, covering and item-capacity problems.

Every problem is compiled into the conic standard form used by Clarabel::

    minimize    q^T z
    subject to  A z + s = b,   s in K

where ``K`` is a product of zero, nonnegative and second-order cones. Maximization
problems are normalized to minimization by negating the objective. A
:class:`CompiledProblem` keeps its Clarabel instance alive, so repeated solves on
the same feasible set (the common case during training) only update ``q``.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass

import clarabel
import numpy as np
import scipy.sparse as sp

from sporc.errors import DimMismatch

NORMS = ("l1", "l2")
FEAS_TOL = 1e-6


class Status(enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    NUMERICAL_FAILURE = "NumericalFailure"


@dataclass(frozen=True, eq=False)
class BallUncertainty:
    """Norm ball ``{a : ||a - center||_norm <= radius}``; ``radius = inf`` is the whole space."""

    center: np.ndarray
    radius: float
    norm: str = "l2"

    def __post_init__(self):
        center = np.array(self.center, dtype=float, copy=True).ravel()
        center.setflags(write=False)
        object.__setattr__(self, "center", center)
        radius = float(self.radius)
        if math.isnan(radius) or radius < 0:
            raise ValueError(f"radius must be >= 0 or inf, got {self.radius!r}")
        object.__setattr__(self, "radius", radius)
        if self.norm not in NORMS:
            raise ValueError(f"norm must be one of {NORMS}, got {self.norm!r}")

    @property
    def is_infinite(self):
        return math.isinf(self.radius)

    @property
    def dual_norm(self):
        return "linf" if self.norm == "l1" else "l2"

    def distance(self, a):
        r = np.asarray(a, float) - self.center
        return float(np.abs(r).sum()) if self.norm == "l1" else float(np.sqrt(r @ r))

    def contains(self, a, tol=1e-9):
        if self.is_infinite:
            return True
        return self.distance(a) <= self.radius + tol

    def support(self, w):
        """``max_{a in ball} a^T w``."""
        w = np.asarray(w, float)
        if self.is_infinite:
            return math.inf if np.any(w != 0) else 0.0
        return float(self.center @ w + self.radius * _norm(w, self.dual_norm))

    def __eq__(self, other):
        if not isinstance(other, BallUncertainty):
            return NotImplemented
        return (
            self.norm == other.norm
            and self.radius == other.radius
            and np.array_equal(self.center, other.center)
        )

    __hash__ = None


def _norm(w, kind):
    if kind == "linf":
        return float(np.max(np.abs(w))) if w.size else 0.0
    if kind == "l1":
        return float(np.abs(w).sum())
    return float(np.sqrt(w @ w))


def singleton_sets(a_true, norm="l2"):
    return [BallUncertainty(row, 0.0, norm) for row in np.atleast_2d(np.asarray(a_true, float))]


@dataclass(frozen=True)
class RobustProblem:
    """Problem family plus its fixed data.

    ``knapsack``: max c^T w  s.t.  a^T w <= b,  1^T w = 1,  w in [0,1]^d.
    ``alloy``:    min c^T w  s.t.  a_j^T w >= h_j (j = 1..m),  0 <= w <= upper.
    ``capacity``: max c^T w  s.t.  w <= a (elementwise),  1^T w = 1,  w in [0,1]^d.

    ``budget="le"`` relaxes ``1^T w = 1`` to ``1^T w <= 1`` for the two
    maximization families. ``upper`` bounds the covering decisions so the
    feasible set is compact; pass ``None`` for the unbounded covering polyhedron.
    """

    family: str
    b: float = 20.0
    h: tuple = (2.9, 7.1)
    upper: float | None = 100.0
    budget: str = "eq"

    def __post_init__(self):
        if self.budget not in ("eq", "le"):
            raise ValueError(f"budget must be 'eq' or 'le', got {self.budget!r}")
        if self.family not in ("knapsack", "alloy", "capacity"):
            raise ValueError(f"unknown problem family {self.family!r}")
        if self.family == "knapsack" and not self.b > 0:
            raise ValueError(f"knapsack capacity must be positive, got {self.b}")
        if self.family == "alloy":
            h = tuple(float(v) for v in np.atleast_1d(self.h))
            if not h or any(not v > 0 for v in h):
                raise ValueError(f"alloy requirements must be positive, got {h}")
            object.__setattr__(self, "h", h)
            if self.upper is not None and not self.upper > 0:
                raise ValueError("upper bound must be positive")

    @classmethod
    def knapsack(cls, b=20.0, budget="eq"):
        return cls("knapsack", b=float(b), budget=budget)

    @classmethod
    def alloy(cls, h=(2.9, 7.1), upper=100.0):
        return cls("alloy", h=tuple(h), upper=upper)

    @classmethod
    def capacity(cls):
        return cls("capacity")

    @property
    def sense(self):
        return "minimize" if self.family == "alloy" else "maximize"

    @property
    def sign(self):
        """Multiplier that turns the native objective into a minimization cost."""
        return 1.0 if self.family == "alloy" else -1.0

    @property
    def n_rows(self):
        return len(self.h) if self.family == "alloy" else 1


@dataclass
class Solution:
    w: np.ndarray | None
    objective: float
    status: Status

    @property
    def ok(self):
        return self.status is Status.OPTIMAL


_STATUS = {
    "Solved": Status.OPTIMAL,
    "AlmostSolved": Status.OPTIMAL,
    "PrimalInfeasible": Status.INFEASIBLE,
    "AlmostPrimalInfeasible": Status.INFEASIBLE,
    "DualInfeasible": Status.UNBOUNDED,
    "AlmostDualInfeasible": Status.UNBOUNDED,
}


def _settings(tol):
    st = clarabel.DefaultSettings()
    st.verbose = False
    st.presolve_enable = False  # keeps data updates legal
    st.tol_feas = tol
    # the objective is rescaled to max |c| = 1, so the gap is tightened to keep
    # objective values accurate to about ``tol`` in the caller's units
    st.tol_gap_abs = tol * 1e-2
    st.tol_gap_rel = tol * 1e-2
    st.max_iter = 100
    return st


def _check_sets(problem, sets):
    sets = list(sets)
    if len(sets) != problem.n_rows:
        raise DimMismatch(f"{problem.family} needs {problem.n_rows} uncertainty set(s), got {len(sets)}")
    d = sets[0].center.size
    if any(s.center.size != d for s in sets):
        raise DimMismatch("uncertainty set centers have different lengths")
    norms = {s.norm for s in sets}
    if len(norms) > 1:
        raise ValueError("mixed ball norms in one problem are not supported")
    return sets, d


@dataclass(frozen=True)
class _Template:
    A: np.ndarray
    b: np.ndarray
    cones: list
    fills: tuple
    cap_rows: np.ndarray | None
    n_var: int
    rows: np.ndarray
    cols: np.ndarray
    indices: np.ndarray
    indptr: np.ndarray
    P: object


@functools.lru_cache(maxsize=64)
def _template(problem, d, linf, zero_radius):
    """Conic data with placeholder rows for everything that depends on the sets.

    The sparsity pattern marks every entry that any instance can fill, so one
    CSC index structure serves all instances with the same shape.
    """
    nz = d + (1 if linf else 0)
    blocks, rhs, cones, fills = [], [], [], []
    pattern = []
    cap_rows = None
    n_rows = 0

    def add(block, bvec, cone, mask=None):
        nonlocal n_rows
        block = np.zeros((block.shape[0], nz)) if block is None else np.atleast_2d(block)
        if block.shape[1] < nz:
            block = np.hstack([block, np.zeros((block.shape[0], nz - block.shape[1]))])
        blocks.append(block)
        pattern.append(block != 0 if mask is None else mask)
        rhs.append(np.atleast_1d(np.asarray(bvec, float)))
        cones.append(cone)
        start = n_rows
        n_rows += block.shape[0]
        return start

    eye = np.eye(d)
    if problem.family in ("knapsack", "capacity"):
        budget_cone = clarabel.NonnegativeConeT(1) if problem.budget == "le" else clarabel.ZeroConeT(1)
        add(np.ones((1, d)), [1.0], budget_cone)
        add(-eye, np.zeros(d), clarabel.NonnegativeConeT(d))
        r0 = add(eye, np.ones(d), clarabel.NonnegativeConeT(d))
        if problem.family == "capacity":
            cap_rows = np.arange(r0, r0 + d)
    else:
        add(-eye, np.zeros(d), clarabel.NonnegativeConeT(d))
        if problem.upper is not None:
            add(eye, np.full(d, float(problem.upper)), clarabel.NonnegativeConeT(d))

    robust = []
    if problem.family == "knapsack":
        robust = [(problem.b, +1.0)]
    elif problem.family == "alloy":
        robust = [(hj, -1.0) for hj in problem.h]
    for (rhs_j, orient), zero in zip(robust, zero_radius):
        # orient=+1: center^T w + r||w|| <= rhs ; orient=-1: center^T w - r||w|| >= rhs
        row_mask = np.zeros((1, nz), dtype=bool)
        row_mask[0, :d] = True
        if zero:
            r0 = add(np.zeros((1, nz)), [orient * rhs_j], clarabel.NonnegativeConeT(1), row_mask)
            fills.append(("linear", r0, orient))
        elif linf:
            row_mask[0, d] = True
            r0 = add(np.zeros((1, nz)), [orient * rhs_j], clarabel.NonnegativeConeT(1), row_mask)
            fills.append(("linf", r0, orient))
        else:
            mask = np.vstack([row_mask, np.hstack([eye.astype(bool), np.zeros((d, nz - d), bool)])])
            r0 = add(np.zeros((d + 1, nz)), np.concatenate([[orient * rhs_j], np.zeros(d)]),
                     clarabel.SecondOrderConeT(d + 1), mask)
            fills.append(("soc", r0, orient))

    if linf:
        # epigraph t >= |w_i|
        t_col = np.zeros((d, 1))
        add(np.hstack([eye, t_col - 1.0]), np.zeros(d), clarabel.NonnegativeConeT(d))
        add(np.hstack([-eye, t_col - 1.0]), np.zeros(d), clarabel.NonnegativeConeT(d))

    A = np.vstack(blocks)
    A.setflags(write=False)
    mask = np.vstack(pattern)
    cols, rows = np.nonzero(mask.T)  # column-major order
    indptr = np.concatenate([[0], np.cumsum(mask.sum(axis=0))]).astype(np.int64)
    b = np.concatenate(rhs)
    b.setflags(write=False)
    return _Template(A, b, cones, tuple(fills), cap_rows, nz, rows, cols,
                     rows.astype(np.int64), indptr, sp.csc_matrix((nz, nz)))


class CompiledProblem:
    """Robust feasible set ``S(U)`` of a problem, ready for repeated linear objectives."""

    def __init__(self, problem, sets, tol=1e-8):
        self.problem = problem
        self.sets, self.d = _check_sets(problem, sets)
        self.tol = tol
        self.trivially_infeasible = any(s.is_infinite for s in self.sets)
        self._solver = None
        if not self.trivially_infeasible:
            self._build()

    # -- conic data ---------------------------------------------------------
    def _build(self):
        problem, d = self.problem, self.d
        radii = tuple(float(s.radius) for s in self.sets)
        linf = self.sets[0].norm == "l1" and any(r > 0 for r in radii) and problem.family != "capacity"
        tpl = _template(problem, d, linf, tuple(r == 0 for r in radii))
        A = tpl.A.copy()
        b = tpl.b.copy()
        for (kind, r0, orient), ball in zip(tpl.fills, self.sets):
            A[r0, :d] = orient * ball.center
            if kind == "linf":
                A[r0, d] = ball.radius
            elif kind == "soc":
                A[r0 + 1:r0 + 1 + d, :d] = -ball.radius * np.eye(d)
        if tpl.cap_rows is not None:
            ball = self.sets[0]
            b[tpl.cap_rows] = np.minimum(1.0, ball.center - ball.radius)
        self._n_var = tpl.n_var
        self._A = sp.csc_matrix((A[tpl.rows, tpl.cols], tpl.indices, tpl.indptr), shape=A.shape)
        self._b = b
        self._cones = tpl.cones
        self._P = tpl.P

    # -- solving ------------------------------------------------------------
    def solve(self, c):
        """Optimize the native objective ``c`` (max for knapsack/capacity, min for alloy)."""
        c = np.asarray(c, float)
        if c.shape != (self.d,):
            raise DimMismatch(f"objective has shape {c.shape}, expected ({self.d},)")
        if self.trivially_infeasible:
            return Solution(None, math.nan, Status.INFEASIBLE)
        q = np.zeros(self._n_var)
        # unit-scale objective: the solver tolerances are absolute, and positive
        # rescalings of c must give the same decision
        scale = float(np.max(np.abs(c)))
        q[: self.d] = self.problem.sign * (c / scale if scale > 0 else c)
        if self._solver is None:
            self._solver = clarabel.DefaultSolver(
                self._P, q, self._A, self._b, self._cones, _settings(self.tol)
            )
        else:
            self._solver.update(q=q)
        res = self._solver.solve()
        status = _STATUS.get(str(res.status).split(".")[-1], Status.NUMERICAL_FAILURE)
        if status is not Status.OPTIMAL:
            return Solution(None, math.nan, status)
        w = np.asarray(res.x[: self.d], dtype=float)
        if robust_violation(self.problem, w, self.sets) > FEAS_TOL:
            return Solution(None, math.nan, Status.NUMERICAL_FAILURE)
        return Solution(w, float(c @ w), Status.OPTIMAL)

    def contains(self, w, tol=FEAS_TOL):
        if self.trivially_infeasible:
            return False
        return robust_violation(self.problem, w, self.sets) <= tol


def compile_problem(problem, sets, tol=1e-8):
    return CompiledProblem(problem, sets, tol)


def solve_robust(problem, c, sets, tol=1e-8):
    """Solve P(c, U) for a list of per-row uncertainty balls."""
    return CompiledProblem(problem, sets, tol).solve(c)


def solve_singleton(problem, c, a_true, tol=1e-8):
    """Hindsight optimum w*(c, delta_a) with the true constraint parameters."""
    return solve_robust(problem, c, singleton_sets(a_true), tol)


def _fixed_violation(problem, w):
    v = max(0.0, -float(w.min()))
    if problem.family in ("knapsack", "capacity"):
        excess = float(w.sum()) - 1.0
        v = max(v, excess if problem.budget == "le" else abs(excess), float(w.max()) - 1.0)
    elif problem.upper is not None:
        v = max(v, float(w.max()) - problem.upper)
    return v


def robust_violation(problem, w, sets):
    """Largest violation of the fixed and worst-case constraints at ``w`` (0 if feasible)."""
    w = np.asarray(w, float)
    v = _fixed_violation(problem, w)
    if problem.family == "knapsack":
        v = max(v, sets[0].support(w) - problem.b)
    elif problem.family == "alloy":
        for ball, hj in zip(sets, problem.h):
            v = max(v, hj + ball.support(-w))
    else:
        ball = sets[0]
        if ball.is_infinite:
            return math.inf
        v = max(v, float(np.max(w - (ball.center - ball.radius))))
    return v


def check_feasible(problem, w, a_true, tol=FEAS_TOL):
    """True iff ``w`` meets the fixed constraints and the true-parameter constraints."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    if w is None:
        return False
    a_true = np.atleast_2d(np.asarray(a_true, float))
    return robust_violation(problem, np.asarray(w, float), singleton_sets(a_true)) <= tol

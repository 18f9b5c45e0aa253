import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sporc.errors import InfeasibleError
from sporc.losses import (
    CostBox,
    cost_metric,
    cost_plus,
    delta_bound,
    hindsight_cost,
    in_uncertainty,
    spo_rc_loss,
    spo_rc_plus_loss,
    subgrad_cost_plus,
)
from sporc.solver import BallUncertainty, RobustProblem, compile_problem, solve_robust

KNAP = RobustProblem.knapsack(2.0, "le")
CENTER = np.array([1.2, 0.7, 2.1, 1.6, 0.9])
SETS = [BallUncertainty(CENTER, 0.5, "l2")]


def ball(center, radius=0.0, norm="l2"):
    return BallUncertainty(np.asarray(center, float), radius, norm)


def test_cost_metric_example():
    # minimization orientation: the realized knapsack value 1 is reported as -1
    prob = RobustProblem.knapsack(1.0)
    assert cost_metric([1.0, 3.0], [3.0, 1.0], [ball([1, 1])], prob) == pytest.approx(-1.0, abs=1e-6)


def test_cost_metric_at_truth_is_restricted_optimum():
    c = np.array([3.0, 1.0, 2.0, 5.0, 4.0])
    sol = solve_robust(KNAP, c, SETS)
    assert cost_metric(c, c, SETS, KNAP) == pytest.approx(-sol.objective, abs=1e-6)


@pytest.mark.parametrize("scale", [0.01, 0.5, 3.0, 100.0])
def test_cost_metric_positive_scaling(scale):
    rng = np.random.default_rng(4)
    cp = compile_problem(KNAP, SETS)
    for _ in range(10):
        c_hat, c = rng.normal(size=5), rng.normal(size=5)
        assert cost_metric(scale * c_hat, c, cp, KNAP) == pytest.approx(cost_metric(c_hat, c, cp, KNAP), abs=1e-6)


def test_cost_plus_identity():
    rng = np.random.default_rng(5)
    cp = compile_problem(KNAP, SETS)
    for _ in range(20):
        c = rng.normal(3, 1, size=5)
        assert cost_plus(c, c, cp, KNAP) == pytest.approx(cost_metric(c, c, cp, KNAP), abs=1e-6)


def test_cost_plus_zero_prediction_is_worst_case():
    c = np.array([3.0, 1.0, 2.0, 5.0, 4.0])
    worst = solve_robust(KNAP, -c, SETS)
    assert cost_plus(np.zeros(5), c, SETS, KNAP) == pytest.approx(-float(c @ worst.w), abs=1e-6)


def test_surrogate_bounds_cost_on_sampled_pairs():
    rng = np.random.default_rng(6)
    cp = compile_problem(KNAP, SETS)
    for _ in range(150):
        c_hat, c, c2 = rng.normal(3, 2, size=(3, 5))
        base = cost_plus(c_hat, c, cp, KNAP)
        assert cost_metric(c_hat, c, cp, KNAP) <= base + 1e-8
        g = subgrad_cost_plus(c_hat, c, cp, KNAP)
        assert cost_plus(c2, c, cp, KNAP) >= base + g @ (c2 - c_hat) - 1e-6


def test_subgradient_examples():
    c = np.array([3.0, 1.0, 2.0, 5.0, 4.0])
    assert np.allclose(subgrad_cost_plus(c, c, SETS, KNAP), 0.0, atol=1e-6)
    rng = np.random.default_rng(7)
    for _ in range(20):
        g = subgrad_cost_plus(rng.normal(size=5), c, SETS, KNAP)
        assert np.all(np.abs(g) <= 2.0 + 1e-6)


def test_alloy_surrogate_bounds_cost():
    prob = RobustProblem.alloy((1.0, 1.5), upper=5.0)
    sets = [ball([1.0, 0.5, 0.8], 0.1), ball([0.4, 1.2, 0.9], 0.1)]
    cp = compile_problem(prob, sets)
    rng = np.random.default_rng(8)
    for _ in range(50):
        c_hat, c, c2 = rng.uniform(0, 4, size=(3, 3))
        base = cost_plus(c_hat, c, cp, prob)
        assert cost_metric(c_hat, c, cp, prob) <= base + 1e-8
        g = subgrad_cost_plus(c_hat, c, cp, prob)
        assert cost_plus(c2, c, cp, prob) >= base + g @ (c2 - c_hat) - 1e-6


def test_delta_bound_examples():
    assert delta_bound(KNAP, CostBox(np.full(3, -10.0), np.full(3, 5.0))) == pytest.approx(20.0)
    assert delta_bound(KNAP, CostBox(np.zeros(3), np.zeros(3))) == 0.0
    alloy = RobustProblem.alloy((1.0,), upper=2.0)
    assert delta_bound(alloy, CostBox(np.zeros(2), np.ones(2))) == pytest.approx(8.0)


def test_delta_bound_dominates_exact_spread():
    prob = RobustProblem.knapsack(1.5)
    sets = [ball([1.0, 2.0], 0.0)]
    box = CostBox(np.array([-1.0, 2.0]), np.array([3.0, 4.0]))
    spread = 0.0
    # the spread is convex in c, so its maximum over the box sits at a corner
    for corner in itertools.product(*zip(box.lower, box.upper)):
        c = np.array(corner)
        hi = solve_robust(prob, c, sets).objective
        lo = -solve_robust(prob, -c, sets).objective
        spread = max(spread, hi - lo)
    assert spread > 0
    assert delta_bound(prob, box) >= spread


def test_cost_box_from_costs():
    box = CostBox.from_costs(np.array([[0.0, 1.0], [2.0, 3.0]]))
    assert np.allclose(box.lower, [-0.2, 0.8]) and np.allclose(box.upper, [2.2, 3.2])
    with pytest.raises(ValueError):
        CostBox(np.ones(2), np.zeros(2))


def test_membership_matches_norm_definition():
    rng = np.random.default_rng(9)
    for norm in ("l1", "l2"):
        for _ in range(50):
            center, a = rng.normal(size=(2, 3))
            r = float(rng.uniform(0, 3))
            dist = np.abs(a - center).sum() if norm == "l1" else np.linalg.norm(a - center)
            assert in_uncertainty([a], [ball(center, r, norm)]) == (dist <= r + 1e-9)


def test_spo_rc_zero_at_oracle():
    a = np.array([1.5, 0.5, 2.0])
    c = np.array([2.0, 1.0, 3.0])
    sets = [ball(a, 0.0)]
    assert spo_rc_loss(c, c, [a], sets, KNAP, delta=10.0) == pytest.approx(0.0, abs=1e-6)
    assert spo_rc_plus_loss(c, c, [a], sets, KNAP) == pytest.approx(0.0, abs=1e-6)


def test_spo_rc_outside_set_returns_delta():
    a = np.array([1.5, 0.5, 2.0])
    sets = [ball(a + 1.0, 0.1)]
    rng = np.random.default_rng(10)
    for _ in range(5):
        assert spo_rc_loss(rng.normal(size=3), np.ones(3), [a], sets, KNAP, delta=7.5) == 7.5
    with pytest.raises(ValueError):
        spo_rc_loss(np.ones(3), np.ones(3), [a], sets, KNAP, delta=-1.0)


def test_spo_rc_bounds_when_covered():
    rng = np.random.default_rng(11)
    checked = 0
    for _ in range(300):
        center = rng.uniform(0.5, 3, 4)
        a = center + rng.normal(0, 0.2, 4)
        radius = float(rng.uniform(0, 0.6))
        sets = [ball(center, radius)]
        if not in_uncertainty([a], sets):
            continue
        c_hat, c = rng.normal(3, 2, size=(2, 4))
        try:
            opt = hindsight_cost(KNAP, c, [a])
            loss = spo_rc_loss(c_hat, c, [a], sets, KNAP, delta=100.0, hindsight=opt)
            plus = spo_rc_plus_loss(c_hat, c, [a], sets, KNAP, hindsight=opt)
        except InfeasibleError:
            continue
        assert loss >= -1e-6
        assert plus >= loss - 1e-8
        checked += 1
    assert checked > 100


def test_spo_rc_scaling_invariance():
    a = np.array([1.5, 0.5, 2.0, 1.0])
    sets = [ball(a + 0.05, 0.2)]
    c_hat, c = np.array([1.0, 3.0, 2.0, 0.5]), np.array([2.0, 1.0, 3.0, 1.0])
    base = spo_rc_loss(c_hat, c, [a], sets, KNAP, delta=10.0)
    assert spo_rc_loss(7.0 * c_hat, c, [a], sets, KNAP, delta=10.0) == pytest.approx(base, abs=1e-6)


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.floats(-5, 5), min_size=5, max_size=5),
    st.lists(st.floats(-5, 5), min_size=5, max_size=5),
    st.lists(st.floats(0, 6), min_size=5, max_size=5),
)
def test_spo_rc_plus_midpoint_convexity(c1, c2, c):
    cp = compile_problem(KNAP, SETS)
    c1, c2, c = map(np.array, (c1, c2, c))
    mid = cost_plus(0.5 * (c1 + c2), c, cp, KNAP)
    ends = 0.5 * (cost_plus(c1, c, cp, KNAP) + cost_plus(c2, c, cp, KNAP))
    assert mid <= ends + 1e-6


def test_infeasible_set_raises():
    sets = [ball([10.0, 10.0], 0.0)]
    with pytest.raises(InfeasibleError):
        cost_metric([1.0, 1.0], [1.0, 1.0], sets, RobustProblem.knapsack(1.0))

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sporc.conformal import (
    ConformalCalibrator,
    calibrate,
    conformal_quantile,
    conformal_rank,
    empirical_coverage,
    nonconformity_scores,
    uncertainty_set,
)
from sporc.core import Dataset
from sporc.datagen import KnapsackGenSpec, gen_knapsack
from sporc.errors import DimMismatch
from sporc.predictor import MLPPredictor, fit_constraint_predictor


def constant_predictor(value, p=2):
    value = np.atleast_2d(np.asarray(value, float))
    m_c, d = value.shape
    return MLPPredictor(None, None, np.zeros((m_c * d, p)), value.ravel(), m_c, d)


def tiny_dataset(a_rows, p=2):
    a_rows = np.asarray(a_rows, float)
    n = a_rows.shape[0]
    return Dataset(np.zeros((n, p)), np.zeros((n, a_rows.shape[-1])), a_rows.reshape(n, -1, a_rows.shape[-1]))


def test_scores_perfect_predictor_are_zero():
    ds = tiny_dataset([[1.0, 2.0], [1.0, 2.0]])
    assert np.all(nonconformity_scores(constant_predictor([1.0, 2.0]), ds) == 0.0)


@pytest.mark.parametrize("norm,expected", [("l2", 5.0), ("l1", 7.0)])
def test_scores_pythagorean(norm, expected):
    ds = tiny_dataset([[3.0, 4.0]])
    assert nonconformity_scores(constant_predictor([0.0, 0.0]), ds, norm)[0] == pytest.approx(expected)


def test_scores_bad_row():
    with pytest.raises(DimMismatch):
        nonconformity_scores(constant_predictor([0.0, 0.0]), tiny_dataset([[3.0, 4.0]]), row=1)


def test_quantile_examples():
    assert conformal_rank(99, 0.1) == 90
    assert conformal_quantile(np.arange(1, 100), 0.1) == 90
    assert conformal_quantile([1.0, 2.0, 3.0], 0.1) == math.inf
    assert conformal_quantile(np.full(50, 2.5), 0.3) == 2.5


def test_quantile_validation():
    with pytest.raises(ValueError):
        conformal_quantile([], 0.1)
    with pytest.raises(ValueError):
        conformal_quantile([1.0], 1.0)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(0, 100, allow_nan=False), min_size=1, max_size=60),
    st.floats(0.01, 0.99),
    st.floats(0.01, 0.99),
)
def test_quantile_monotone_in_alpha(scores, a1, a2):
    lo, hi = sorted((a1, a2))
    assert conformal_quantile(scores, lo) >= conformal_quantile(scores, hi)


def test_uncertainty_set_properties():
    pred = constant_predictor([[1.0, 2.0]])
    cal = ConformalCalibrator(pred, (0.0,))
    (ball,) = uncertainty_set(cal, np.zeros(2))
    assert ball.radius == 0.0 and np.array_equal(ball.center, [1.0, 2.0])
    assert uncertainty_set(cal, np.ones(2))[0] == uncertainty_set(cal, np.ones(2))[0]
    with pytest.raises(DimMismatch):
        uncertainty_set(cal, np.zeros(3))
    inf_cal = ConformalCalibrator(pred, (math.inf,))
    assert uncertainty_set(inf_cal, np.zeros(2))[0].is_infinite


def test_coverage_extremes():
    rng = np.random.default_rng(0)
    ds = tiny_dataset(rng.normal(size=(100, 2)))
    pred = constant_predictor([0.0, 0.0])
    assert empirical_coverage(ConformalCalibrator(pred, (math.inf,)), ds) == 1.0
    assert empirical_coverage(ConformalCalibrator(pred, (0.0,)), ds) == 0.0
    with pytest.raises(ValueError):
        empirical_coverage(ConformalCalibrator(pred, (0.0,)), ds.subset([]))


def test_calibration_on_knapsack_gives_finite_radius():
    ds = gen_knapsack(KnapsackGenSpec(n=1500, seed=0))
    g = fit_constraint_predictor(ds.subset(np.arange(500)), epochs=20, seed=0)
    cal = calibrate(g, ds.subset(np.arange(500, 1500)), alpha=0.2)
    assert conformal_rank(1000, 0.2) == 801
    assert math.isfinite(cal.quantiles[0]) and cal.quantiles[0] > 0


def test_per_row_and_joint_coverage():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(400, 2, 3))
    ds = Dataset(np.zeros((400, 2)), np.zeros((400, 3)), a)
    pred = constant_predictor(np.zeros((2, 3)))
    cal = calibrate(pred, ds, alpha=0.2)
    joint, rows = empirical_coverage(cal, ds, per_row=True)
    assert len(rows) == 2
    assert all(r >= 0.8 for r in rows)
    assert joint <= min(rows)


def test_calibrator_round_trip(tmp_path):
    pred = constant_predictor([[1.0, 2.0]])
    cal = ConformalCalibrator(pred, (math.inf,), "l1", 0.1)
    back = ConformalCalibrator.from_dict(json.loads(json.dumps(cal.to_dict())))
    assert back.quantiles == (math.inf,) and back.norm == "l1" and back.alpha == 0.1
    (tmp_path / "g.json").write_text(json.dumps(pred.to_dict()))
    ref = ConformalCalibrator.from_dict(json.loads(json.dumps(cal.to_dict("g.json"))), base_dir=tmp_path)
    assert np.array_equal(ref.predictor.b2, pred.b2)


def test_calibrator_validation():
    pred = constant_predictor([[1.0, 2.0]])
    with pytest.raises(ValueError):
        ConformalCalibrator(pred, (-1.0,))
    with pytest.raises(DimMismatch):
        ConformalCalibrator(pred, (1.0, 2.0))

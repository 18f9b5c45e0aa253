from dataclasses import replace

import numpy as np
import pytest

from sporc.datagen import (
    AlloyGenSpec,
    KnapsackGenSpec,
    ToyGenSpec,
    gen_alloy,
    gen_knapsack,
    gen_toy,
    gen_with_test,
    knapsack_mean_cost,
    knapsack_mean_weight,
    toy2_capacity,
    toy_crossings,
    toy_mean_costs,
    toy_removal_mask,
)


def test_mean_cost_at_origin_deg1():
    B = np.ones((5, 10))
    val = knapsack_mean_cost(np.zeros((1, 10)), B, 1)
    assert np.allclose(val, 5.0 / 3.5 * 13.0)
    assert np.allclose(val, 18.5714, atol=1e-4)


def test_mean_weight_at_origin_deg4():
    B = np.ones((5, 10))
    val = knapsack_mean_weight(np.zeros((1, 10)), B, 4)
    assert np.allclose(val, 2.6988, atol=1e-4)


def test_knapsack_is_deterministic():
    spec = KnapsackGenSpec(n=50, seed=3)
    a, ia = gen_knapsack(spec, return_info=True)
    b, ib = gen_knapsack(spec, return_info=True)
    assert a == b
    assert np.array_equal(ia.B_c, ib.B_c) and np.array_equal(ia.B_a, ib.B_a)
    assert gen_knapsack(replace(spec, seed=4)) != a


def test_knapsack_noise_coefficient():
    spec = KnapsackGenSpec(n=500, seed=1)
    ds, info = gen_knapsack(spec, return_info=True)
    coef = (spec.p - np.abs(ds.x).sum(axis=1)) / spec.p
    assert np.allclose(info.a_noise, coef[:, None] * info.extras["eps_a"])
    mean_a = knapsack_mean_weight(ds.x, info.B_a, spec.deg_a)
    assert np.allclose(ds.a[:, 0, :] - mean_a, info.a_noise)
    resid = np.abs(info.a_noise).mean(axis=1)
    assert np.corrcoef(np.abs(ds.x).sum(axis=1), resid)[0, 1] < 0


def test_knapsack_cost_mean_at_origin():
    # the noise is N(0, 1) so the sample mean at x = 0 has standard error 1/sqrt(n)
    spec = KnapsackGenSpec(n=20000, deg_c=2, seed=5)
    _, info = gen_knapsack(replace(spec, n=1), return_info=True)
    rng = np.random.default_rng(0)
    mean = knapsack_mean_cost(np.zeros((1, spec.p)), info.B_c, spec.deg_c)[0]
    draws = mean + rng.standard_normal((spec.n, spec.d))
    assert np.all(np.abs(draws.mean(axis=0) - mean) < 3.0 / np.sqrt(spec.n))
    assert np.allclose(mean, 5.0 / 3.5**2 * (9.0 + 10.0))


def test_knapsack_spec_validation():
    with pytest.raises(ValueError):
        KnapsackGenSpec(deg_c=17)
    with pytest.raises(ValueError):
        KnapsackGenSpec(d=1)
    with pytest.raises(ValueError):
        KnapsackGenSpec(b=0.0)


def test_alloy_defaults_and_nonnegativity():
    spec = AlloyGenSpec(n=300, seed=2)
    assert spec.h == (2.9, 7.1)
    ds, info = gen_alloy(spec, return_info=True)
    assert ds.dims == (300, 10, 5, 2)
    assert np.all(ds.a >= 0)
    assert np.all((info.extras["P"] >= 0.1) & (info.extras["P"] <= 1.0))


def test_alloy_gamma_mean_is_shape():
    rng = np.random.default_rng(0)
    draws = rng.gamma(0.5, 1.0, size=200000)
    assert abs(draws.mean() - 0.5) < 0.01


def test_alloy_spec_validation():
    with pytest.raises(ValueError):
        AlloyGenSpec(m=2, h=(1.0,))
    with pytest.raises(ValueError):
        AlloyGenSpec(h=(1.0, -1.0))


def test_toy_means_at_zero():
    assert np.allclose(toy_mean_costs(0.0), [[4.0, 2.875]])


def test_toy_curves_cross_twice():
    x1, x2 = toy_crossings()
    assert -1 < x1 < x2 < 1
    diff = lambda x: toy_mean_costs(x)[:, 0] - toy_mean_costs(x)[:, 1]
    assert np.allclose(diff(np.array([x1, x2])), 0.0, atol=1e-12)
    grid = np.linspace(-1, 1, 20001)
    signs = np.sign(diff(grid))
    assert np.count_nonzero(np.diff(signs)) == 2


def test_toy2_capacity_drops_at_08():
    assert toy2_capacity(0.9) == 0.0
    assert toy2_capacity(0.79) == 100.0
    ds = gen_toy(ToyGenSpec("toy2-truncate", n=200, seed=1))
    hi = ds.x[:, 0] >= 0.8
    assert np.all(ds.a[hi, 0, 1] == 0.0) and np.all(ds.a[~hi, 0, 1] == 100.0)


def test_toy1_removal_mask():
    ds = gen_toy(ToyGenSpec("toy1-reweight", n=1000, seed=0))
    keep = toy_removal_mask(ds, seed=0)
    assert (~keep).sum() == 300
    assert np.all(np.abs(ds.x[~keep, 0]) < 0.5)
    assert np.array_equal(keep, toy_removal_mask(ds, seed=0))


def test_toy_spec_validation():
    with pytest.raises(ValueError):
        ToyGenSpec(n=5)
    with pytest.raises(ValueError):
        ToyGenSpec("toy3")


def test_gen_with_test_shares_structure():
    spec = KnapsackGenSpec(n=30, seed=9)
    train, test = gen_with_test(gen_knapsack, spec, 20)
    both = gen_knapsack(replace(spec, n=50))
    assert train == both.subset(np.arange(30))
    assert test == both.subset(np.arange(30, 50))

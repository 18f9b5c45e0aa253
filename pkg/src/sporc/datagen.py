"""Synthetic data generators for every problem family."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from sporc.core import Dataset, make_rng


@dataclass(frozen=True)
class KnapsackGenSpec:
    n: int = 1000
    p: int = 10
    d: int = 5
    deg_c: int = 4
    deg_a: int = 4
    b: float = 20.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 0 or self.p < 1 or self.d < 2:
            raise ValueError(f"need n >= 0, p >= 1, d >= 2; got n={self.n}, p={self.p}, d={self.d}")
        if not 1 <= self.deg_c <= 16 or self.deg_a < 1:
            raise ValueError(f"deg_c must be in 1..16 and deg_a >= 1; got {self.deg_c}, {self.deg_a}")
        if not self.b > 0:
            raise ValueError("capacity b must be positive")


@dataclass(frozen=True)
class AlloyGenSpec:
    n: int = 1000
    p: int = 10
    d: int = 5
    m: int = 2
    deg_c: int = 4
    h: tuple = (2.9, 7.1)
    seed: int = 0
    noise_sd: float = 0.05
    gamma_per_sample: bool = False

    def __post_init__(self):
        h = tuple(float(v) for v in self.h)
        object.__setattr__(self, "h", h)
        if self.m < 1 or len(h) != self.m:
            raise ValueError(f"need m >= 1 requirements, got m={self.m}, h={h}")
        if any(not v > 0 for v in h):
            raise ValueError("requirements h must be positive")
        if self.n < 0 or self.p < 1 or self.d < 1 or not 1 <= self.deg_c <= 16:
            raise ValueError("invalid alloy dimensions")


@dataclass(frozen=True)
class ToyGenSpec:
    variant: str = "toy1-reweight"
    n: int = 1000
    seed: int = 0
    noise_sd: float = 0.1

    def __post_init__(self):
        if self.variant not in ("toy1-reweight", "toy2-truncate"):
            raise ValueError(f"unknown toy variant {self.variant!r}")
        if self.n < 10:
            raise ValueError("toy datasets need n >= 10")


@dataclass(frozen=True)
class GenInfo:
    """Latent quantities of a draw, kept for oracles and diagnostics."""

    B_c: np.ndarray
    B_a: np.ndarray | None = None
    a_noise: np.ndarray | None = None
    extras: dict = field(default_factory=dict)


def poly_kernel(x, B, deg):
    """``(5 / 3.5^deg) * ((B x)_j / sqrt(p) + 3)^deg`` for every row of ``x``."""
    x = np.atleast_2d(x)
    z = x @ B.T / np.sqrt(x.shape[1]) + 3.0
    return 5.0 / 3.5**deg * z**deg


def knapsack_mean_cost(x, B_c, deg_c):
    """E[c | x] of the knapsack/alloy cost model."""
    return poly_kernel(x, B_c, deg_c) + 5.0 / 3.5**deg_c * 10.0


def knapsack_mean_weight(x, B_a, deg_a):
    return poly_kernel(x, B_a, deg_a)


def _bernoulli_matrix(rng, d, p):
    return (rng.random((d, p)) < 0.5).astype(float)


def gen_knapsack(spec, return_info=False):
    structure = make_rng(spec.seed, "knapsack", "structure")
    B_c = _bernoulli_matrix(structure, spec.d, spec.p)
    B_a = _bernoulli_matrix(structure, spec.d, spec.p)
    rng = make_rng(spec.seed, "knapsack", "samples")
    x = rng.uniform(-1.0, 1.0, size=(spec.n, spec.p))
    eps_c = rng.standard_normal((spec.n, spec.d))
    eps_a = rng.standard_normal((spec.n, spec.d))
    c = knapsack_mean_cost(x, B_c, spec.deg_c) + eps_c
    # noise shrinks as ||x||_1 grows
    scale = (spec.p - np.abs(x).sum(axis=1, keepdims=True)) / spec.p
    a_noise = scale * eps_a
    a = knapsack_mean_weight(x, B_a, spec.deg_a) + a_noise
    ds = Dataset(x, c, a[:, None, :])
    if return_info:
        return ds, GenInfo(B_c=B_c, B_a=B_a, a_noise=a_noise, extras={"eps_a": eps_a})
    return ds


def gen_alloy(spec, return_info=False):
    """Brass-style covering data.

    Concentrations do not depend on ``x``: a preference matrix ``P ~ U(0.1, 1)``
    and base concentrations ``Gamma(shape=P, scale=1)`` are drawn once, and every
    sample perturbs them with ``N(0, noise_sd^2)`` noise before clamping at zero.
    With ``gamma_per_sample=True`` the Gamma draw is repeated for each sample.
    """
    structure = make_rng(spec.seed, "alloy", "structure")
    B_c = _bernoulli_matrix(structure, spec.d, spec.p)
    P = structure.uniform(0.1, 1.0, size=(spec.m, spec.d))
    G = structure.gamma(P, 1.0)
    rng = make_rng(spec.seed, "alloy", "samples")
    x = rng.uniform(-1.0, 1.0, size=(spec.n, spec.p))
    c = knapsack_mean_cost(x, B_c, spec.deg_c) + rng.standard_normal((spec.n, spec.d))
    if spec.gamma_per_sample:
        base = rng.gamma(np.broadcast_to(P, (spec.n, spec.m, spec.d)), 1.0)
    else:
        base = np.broadcast_to(G, (spec.n, spec.m, spec.d))
    noise = spec.noise_sd * rng.standard_normal((spec.n, spec.m, spec.d))
    a = np.maximum(base + noise, 0.0)
    ds = Dataset(x, c, a)
    if return_info:
        return ds, GenInfo(B_c=B_c, extras={"P": P, "G": G})
    return ds


# ---------------------------------------------------------------------------
# toy examples: two items, scalar context


TOY_CAPACITY_FREE = 100.0


def toy_mean_costs(x):
    x = np.asarray(x, float).reshape(-1)
    return np.column_stack([-4.0 * x**2 + 4.0, (x + 1.0) ** 2 / 8.0 + 2.75])


def toy_crossings():
    """The two roots in (-1, 1) of E[c1|x] = E[c2|x]."""
    # -4x^2 + 4 - (x^2 + 2x + 1)/8 - 2.75 = 0
    roots = np.sort(np.roots([-4.125, -0.25, 1.125]).real)
    return float(roots[0]), float(roots[1])


def toy2_capacity(x):
    return np.where(np.asarray(x, float) < 0.8, 100.0, 0.0)


def gen_toy(spec):
    """Toy data; ``a`` holds per-item capacities (toy2) or zero weights (toy1)."""
    rng = make_rng(spec.seed, "toy", spec.variant)
    x = rng.uniform(-1.0, 1.0, size=spec.n)
    c = toy_mean_costs(x) + spec.noise_sd * rng.standard_normal((spec.n, 2))
    if spec.variant == "toy2-truncate":
        a = np.column_stack([np.full(spec.n, TOY_CAPACITY_FREE), toy2_capacity(x)])
    else:
        a = np.zeros((spec.n, 2))
    return Dataset(x[:, None], c, a[:, None, :])


def toy_removal_mask(dataset, seed, fraction=0.3, band=0.5):
    """Boolean mask of samples kept after the toy-1 truncation.

    ``round(fraction * n)`` samples are removed uniformly at random from those with
    ``|x| < band`` (all of them if fewer are available).
    """
    x = dataset.x[:, 0]
    inside = np.flatnonzero(np.abs(x) < band)
    k = min(int(round(fraction * dataset.n)), inside.size)
    drop = make_rng(seed, "toy", "removal").choice(inside, size=k, replace=False)
    keep = np.ones(dataset.n, dtype=bool)
    keep[drop] = False
    return keep


def gen_with_test(gen, spec, n_test):
    """Draw ``spec.n + n_test`` samples from one structure and split off the last ``n_test``.

    Train and test then share the latent matrices (``B_c``, ``B_a``, ...), which
    separate calls with different seeds would not.
    """
    from dataclasses import replace

    if n_test < 1:
        raise ValueError("n_test must be positive")
    ds = gen(replace(spec, n=spec.n + n_test))
    return ds.subset(np.arange(spec.n)), ds.subset(np.arange(spec.n, spec.n + n_test))

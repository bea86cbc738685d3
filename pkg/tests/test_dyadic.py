import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from entropylab.dyadic import (
    DyadicCube,
    DyadicWeight,
    EpsilonFn,
    LeafFunction,
    bumped_entropy,
    cube_average,
    entropy,
    epsilon_eval,
    indicator,
    iter_cubes,
    local_maximal,
    normalization_integral,
    weighted_average,
)
from entropylab.errors import DomainError, StructureError

import oracles

ROOT = DyadicCube.root(1)


def spike(depth, leaf=0, d=1):
    vals = np.zeros((1 << depth,) * d)
    vals[np.unravel_index(leaf, vals.shape)] = 2.0 ** (d * depth)
    return DyadicWeight(vals)


# -- cubes -------------------------------------------------------------------


def test_cube_geometry():
    Q = DyadicCube(2, (1,))
    assert Q.volume == 0.25
    assert Q.parent() == DyadicCube(1, (0,))
    assert Q.children() == [DyadicCube(3, (2,)), DyadicCube(3, (3,))]
    assert DyadicCube(1, (0,)).contains(Q)
    assert not Q.contains(DyadicCube(1, (0,)))
    assert str(DyadicCube(1, (0,))) == "[0,1/2)"
    assert DyadicCube.from_dict(Q.to_dict()) == Q


def test_cube_rejects_bad_index():
    with pytest.raises(StructureError):
        DyadicCube(1, (2,))
    with pytest.raises(StructureError):
        DyadicCube(-1, (0,))


def test_iter_cubes_counts():
    assert len(list(iter_cubes(1, 3))) == 15
    assert len(list(iter_cubes(2, 2))) == 1 + 4 + 16


def test_depth_limits():
    with pytest.raises(StructureError):
        LeafFunction.constant(2, 9)
    with pytest.raises(StructureError):
        LeafFunction(np.ones(6))
    LeafFunction.constant(1, 16)


def test_weight_validation():
    with pytest.raises(DomainError):
        DyadicWeight(np.array([1.0, -1.0]))
    with pytest.raises(DomainError):
        DyadicWeight(np.array([1.0, np.inf]))
    with pytest.raises(DomainError):
        DyadicWeight(np.zeros(4))
    assert DyadicWeight.zero(1, 2).mass() == 0.0


def test_weight_round_trip():
    w = DyadicWeight.from_flat(2, 1, [1, 2, 3, 4])
    again = DyadicWeight.from_dict(w.to_dict())
    assert np.array_equal(again.values, w.values)
    assert w.values[0, 1] == 2.0  # row-major


def test_values_are_read_only():
    w = DyadicWeight(np.ones(4))
    with pytest.raises(ValueError):
        w.values[0] = 2.0


# -- averages ----------------------------------------------------------------


def test_cube_average_examples():
    sigma = DyadicWeight(np.array([4.0, 0, 0, 0]))
    assert cube_average(sigma, DyadicCube(1, (0,))) == 2.0
    assert cube_average(DyadicWeight.constant(1, 3), DyadicCube(2, (3,))) == 1.0
    assert cube_average(DyadicWeight.zero(1, 2), ROOT) == 0.0


def test_cube_average_structural_errors():
    sigma = DyadicWeight(np.ones(4))
    with pytest.raises(StructureError):
        cube_average(sigma, DyadicCube(3, (0,)))
    with pytest.raises(StructureError):
        cube_average(sigma, DyadicCube.root(2))


def test_weighted_average_examples():
    sigma = DyadicWeight(np.array([4.0, 0, 0, 0]))
    f = LeafFunction(np.array([1.0, 2, 3, 4]))
    assert weighted_average(f, sigma, ROOT) == 1.0
    assert weighted_average(f, sigma, DyadicCube(1, (1,))) == 0.0
    lognormal = DyadicWeight(np.exp(np.random.default_rng(0).normal(size=8)))
    assert weighted_average(LeafFunction(np.full(8, 3.5)), lognormal, ROOT) == pytest.approx(3.5, rel=1e-14)
    with pytest.raises(StructureError):
        weighted_average(LeafFunction(np.ones(8)), sigma, ROOT)


# -- maximal function and entropy --------------------------------------------


def test_local_maximal_examples():
    assert local_maximal(DyadicWeight(np.array([4.0, 0, 0, 0])), ROOT).values.tolist() == [4, 2, 1, 1]
    assert local_maximal(spike(3), ROOT).values.tolist() == [8, 4, 2, 2, 1, 1, 1, 1]
    c = local_maximal(DyadicWeight.constant(1, 4, 2.5), DyadicCube(1, (1,))).values
    assert np.all(c[8:] == 2.5) and np.all(c[:8] == 0)


@pytest.mark.parametrize("d,depth", [(1, 1), (1, 3), (1, 5), (2, 1), (2, 3)])
def test_local_maximal_matches_brute_force(d, depth):
    rng = np.random.default_rng(depth * 10 + d)
    for _ in range(5):
        vals = oracles.random_weight(rng, d, depth, zero_fraction=0.3, variance=4.0)
        sigma = DyadicWeight(vals)
        for level in range(depth + 1):
            index = tuple(int(i) for i in rng.integers(0, 1 << level, size=d))
            fast = local_maximal(sigma, DyadicCube(level, index)).values
            slow = oracles.maximal(vals, (level, index))
            np.testing.assert_allclose(fast, slow, rtol=1e-12, atol=0)


def test_entropy_examples():
    assert entropy(DyadicWeight(np.array([4.0, 0, 0, 0])), ROOT) == 2.0
    assert entropy(spike(3), ROOT) == 2.5
    assert entropy(DyadicWeight.constant(2, 3, 7.0), DyadicCube.root(2)) == 1.0
    assert entropy(DyadicWeight(np.array([4.0, 0, 0, 0])), DyadicCube(1, (1,))) == 1.0


def test_entropy_cache_matches_direct():
    rng = np.random.default_rng(3)
    vals = oracles.random_weight(rng, 2, 3, zero_fraction=0.2)
    sigma = DyadicWeight(vals)
    for Q in iter_cubes(2, 3):
        direct = entropy(sigma, Q)
        cached = float(sigma.entropies[Q.level][Q.index])
        assert cached == pytest.approx(direct, rel=1e-12)
        assert direct == pytest.approx(oracles.entropy(vals, (Q.level, Q.index)), rel=1e-12)


def test_bumped_entropy_examples():
    eps = EpsilonFn.joint(1.0)
    assert bumped_entropy(DyadicWeight.constant(1, 3), ROOT, eps) == 1.0
    sigma = DyadicWeight(np.array([4.0, 0, 0, 0]))
    assert bumped_entropy(sigma, ROOT, eps) == pytest.approx(2 * (1 + math.log(2)) ** 2, rel=1e-14)


weights_1d = st.integers(1, 8).flatmap(
    lambda L: arrays(np.float64, 1 << L, elements=st.one_of(st.just(0.0), st.floats(1e-6, 1e3))))


@settings(max_examples=200, deadline=None)
@given(weights_1d, st.floats(1e-3, 1e3))
def test_entropy_at_least_one_and_scale_invariant(vals, lam):
    if not np.any(vals > 0):
        vals = vals.copy()
        vals[0] = 1.0
    sigma = DyadicWeight(vals)
    scaled = sigma.scaled(lam)
    for Q in iter_cubes(1, min(sigma.depth, 4)):
        rho = entropy(sigma, Q)
        assert rho >= 1.0
        assert entropy(scaled, Q) == pytest.approx(rho, rel=1e-12)
        M = local_maximal(sigma, Q).values[Q.slices(sigma.depth)]
        assert np.all(M >= sigma.average(Q) * (1 - 1e-15))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_entropy_is_one_only_for_constant(depth, seed):
    rng = np.random.default_rng(seed)
    vals = np.exp(rng.normal(size=1 << depth))
    sigma = DyadicWeight(vals)
    assert entropy(sigma, ROOT) > 1.0
    assert entropy(DyadicWeight(np.full(1 << depth, vals[0])), ROOT) == 1.0


# -- bump functions ------------------------------------------------------------


def test_epsilon_examples():
    assert epsilon_eval(EpsilonFn.joint(1.0), 1.0) == 1.0
    assert epsilon_eval(EpsilonFn.separated(2.0, 1.0), 1.0) == 1.0
    assert epsilon_eval(EpsilonFn.joint(0.5), 1.0) == 2.0
    assert epsilon_eval(EpsilonFn.joint(1.0), math.e) == 4.0
    assert epsilon_eval(EpsilonFn.separated(2.0, 0.5), math.e) == pytest.approx(4.0 * 2.0**3, rel=1e-14)


def test_epsilon_domain():
    with pytest.raises(DomainError):
        epsilon_eval(EpsilonFn.joint(), 0.5)
    with pytest.raises(DomainError):
        EpsilonFn.joint(0.0)
    with pytest.raises(DomainError):
        EpsilonFn.separated(1.0)
    with pytest.raises(DomainError):
        EpsilonFn("orlicz")


@given(st.floats(1.0, 1e12), st.floats(1.0, 1e12), st.sampled_from([0.5, 1.0, 2.0]))
def test_epsilon_monotone(t1, t2, delta):
    lo, hi = sorted((t1, t2))
    for eps in (EpsilonFn.joint(delta), EpsilonFn.separated(3.0, delta)):
        assert epsilon_eval(eps, lo) <= epsilon_eval(eps, hi)


@pytest.mark.parametrize("eps", [EpsilonFn.joint(d) for d in (0.5, 1.0, 2.0)]
                         + [EpsilonFn.separated(p, d) for p in (1.5, 2.0, 3.0) for d in (0.5, 1.0)])
def test_normalization_quadrature(eps):
    upper = math.exp(40.0)
    closed = 1.0 - 41.0 ** (-eps.delta)
    assert eps.partial_normalization(upper) == pytest.approx(closed, rel=1e-15)
    assert abs(normalization_integral(eps, upper) - closed) < 1e-6


def test_normalization_quadrature_in_t_variable():
    # same integral without the log substitution, on a short range
    from scipy import integrate

    eps = EpsilonFn.joint(1.0)
    val, _ = integrate.quad(lambda t: 1.0 / (epsilon_eval(eps, t) * t), 1.0, 50.0, epsrel=1e-12)
    assert val == pytest.approx(1.0 - 1.0 / (1.0 + math.log(50.0)), rel=1e-9)


def test_indicator():
    ind = indicator(DyadicCube(1, (1,)), 2)
    assert ind.values.tolist() == [0, 0, 1, 1]


def test_spike_all_positions_two_dimensional():
    for leaf in range(16):
        sigma = spike(2, leaf, d=2)
        np.testing.assert_allclose(local_maximal(sigma, DyadicCube.root(2)).values,
                                   oracles.maximal(sigma.values), rtol=1e-12)
        assert entropy(sigma, DyadicCube.root(2)) == pytest.approx(
            oracles.entropy(sigma.values), rel=1e-12)


def test_all_subcubes_entropy_one_dimensional():
    vals = np.array([3.0, 0.0, 1.0, 5.0, 0.0, 0.0, 2.0, 9.0])
    sigma = DyadicWeight(vals)
    for level, index in itertools.chain.from_iterable(
            ((l, (i,)) for i in range(1 << l)) for l in range(4)):
        assert entropy(sigma, DyadicCube(level, index)) == pytest.approx(
            oracles.entropy(vals, (level, index)), rel=1e-12)

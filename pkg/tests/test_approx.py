import math

import numpy as np
import pytest
from scipy import stats

from ritzlab.approx import (BudgetExceeded, ReluCombination, RidgeProfile, build_approximant,
                            delta_tau, error_rules, existence_bound, h1_error, h1_error_spread,
                            maurey_sample, relu_interpolate, softplus_swap, split_width,
                            w1inf_error)
from ritzlab.net import TwoLayerNet
from ritzlab.quadrature import composite_gauss, default_rule, gauss_legendre
from ritzlab.spectral import CosineSeries, norm

from conftest import random_series

PI2 = math.pi ** 2
phi = CosineSeries.basis


@pytest.mark.parametrize("kappa", [1, 2, 5])
@pytest.mark.parametrize("phase", [0, 1])
def test_ridge_profile_properties(kappa, phase):
    g = RidgeProfile(-1.7, kappa, phase)
    z = np.linspace(-1, 1, 2001)
    assert g(0.0, 1) == pytest.approx(0.0, abs=1e-14)
    for order in range(3):
        assert np.abs(g(z, order)).max() <= g.bound + 1e-12


def test_maurey_constant_series():
    s = maurey_sample(phi((0,)), 10, 0)
    assert s.base == 1.0 and len(s) == 0


def test_maurey_single_mode():
    s = maurey_sample(phi((1,)), 50, 3)
    assert s.normalizer == pytest.approx(1 + PI2)
    for f in s.features:
        assert f.kappa == 1 and abs(f.direction[0]) == 1.0
        assert abs(f.amplitude) == pytest.approx(1 + PI2)


def test_maurey_normalizer_below_norm(rng):
    u = random_series(rng, 3, modes=6)
    assert maurey_sample(u, 4, 0).normalizer <= norm(u, "barron", 2.0) + 1e-12


def test_maurey_draw_frequencies():
    # Barron weights 1 : 3 on the modes 1 and 2
    u = CosineSeries(1, {(1,): 1 / (1 + PI2), (2,): 3 / (1 + 4 * PI2)})
    s = maurey_sample(u, 100_000, 11)
    counts = np.bincount([f.kappa for f in s.features], minlength=3)[1:]
    assert stats.chisquare(counts, [25_000, 75_000]).pvalue > 0.01


def test_maurey_sample_is_unbiased_in_mean():
    u = CosineSeries(2, {(1, 0): 0.5, (1, 2): -0.2, (0, 0): 0.3})
    x = np.array([[0.2, 0.7], [0.9, 0.1]])
    est = np.mean([maurey_sample(u, 200, s)(x) for s in range(200)], axis=0)
    np.testing.assert_allclose(est, u(x), atol=0.15)


@pytest.mark.parametrize("m1", [8, 32, 128])
def test_maurey_rate(m1):
    rng = np.random.default_rng(42)
    u = random_series(rng, 2, modes=10, max_freq=3)
    rule = default_rule(2, 3)
    B = norm(u, "barron", 2.0)
    sq = [h1_error(maurey_sample(u, m1, seed), u, rule) ** 2 for seed in range(50)]
    assert np.mean(sq) <= B ** 2 / m1 * 1.5


def test_relu_interpolate_constant():
    comb = relu_interpolate(lambda z: np.ones_like(z), 8)
    assert comb.c == 1.0 and np.all(comb.a == 0)


def test_relu_interpolate_square():
    comb = relu_interpolate(lambda z: z ** 2, 1, bound=2.0)
    z = np.linspace(-1, 1, 10_001)
    np.testing.assert_allclose(comb(z), np.abs(z), atol=1e-14)
    val_err, der_err = w1inf_error(lambda z: z ** 2, lambda z: 2 * z, comb)
    assert val_err == pytest.approx(0.25, abs=1e-6) and der_err == pytest.approx(1.0, abs=1e-3)
    assert max(val_err, der_err) <= 4


def test_relu_interpolate_profile_example():
    g = RidgeProfile(1.0, 1)
    comb = relu_interpolate(g, 64, 1.0)
    assert max(w1inf_error(g, lambda z: g(z, 1), comb)) <= 2 / 64


def test_relu_interpolate_errors():
    with pytest.raises(ValueError):
        relu_interpolate(lambda z: z, 0)
    with pytest.raises(ValueError):
        relu_interpolate(lambda z: np.full_like(z, np.nan), 2)


@pytest.mark.parametrize("m2", [4, 16, 64, 256])
def test_relu_interpolation_bound(m2):
    rng = np.random.default_rng(m2)
    for _ in range(50):
        g = RidgeProfile(float(rng.normal(scale=3)), int(rng.integers(1, 6)), int(rng.integers(2)))
        comb = relu_interpolate(g, m2, g.bound)
        nodes = -1 + np.arange(2 * m2 + 1) / m2
        np.testing.assert_allclose(comb(nodes), g(nodes), atol=1e-12)
        val_err, der_err = w1inf_error(g, lambda s: g(s, 1), comb)
        assert max(val_err, der_err) <= 2 * g.bound / m2 + 1e-12
        assert np.abs(comb.a).max() <= 2 * g.bound / m2 + 1e-12
        assert abs(comb.c) <= g.bound


def test_delta_tau():
    assert delta_tau(10.0) == pytest.approx(0.1 * 1.1 * (math.log(10 / 3) + 1), rel=1e-15)
    assert delta_tau(10.0) == pytest.approx(0.24244, abs=1e-5)
    assert delta_tau(3.0) is None


def test_swap_zero_combination():
    comb = relu_interpolate(lambda z: np.zeros_like(z), 4)
    res = softplus_swap(comb, 10.0)
    assert res.deviation == 0.0 and res.within_budget


def test_swap_single_unit():
    comb = ReluCombination(0.0, np.array([1.0]), np.array([1.0]), np.array([0.0]), 1.0)
    res = softplus_swap(comb, 10.0)
    z = np.linspace(-1, 1, 10_001)
    assert np.abs(comb(z) - res.combination(z)).max() == pytest.approx(math.log(2) / 10, abs=1e-12)
    # the derivative gap at the kink is 1/2 and sets the W^{1,inf} deviation
    assert res.deviation == pytest.approx(0.5)
    assert res.within_budget


@pytest.mark.parametrize("tau", [4.0, 10.0, 32.0, 100.0])
def test_swap_budget(tau):
    # the budget relies on enough grid cells per unit sharpness
    m2 = math.ceil(tau / math.log(tau / 3)) + 1
    for kappa in (1, 3):
        g = RidgeProfile(2.0, kappa)
        res = softplus_swap(relu_interpolate(g, m2, g.bound), tau)
        assert res.deviation <= res.budget + 1e-12


def test_swap_check_raises_when_budget_is_violated():
    # a deliberately understated sup bound
    comb = ReluCombination(0.0, np.array([1.0]), np.array([1.0]), np.array([0.0]), 1e-3)
    with pytest.raises(BudgetExceeded):
        softplus_swap(comb, 10.0)
    assert not softplus_swap(comb, 10.0, check=False).within_budget


def test_swap_trivial_budget_for_small_tau():
    g = RidgeProfile(1.0, 1)
    res = softplus_swap(relu_interpolate(g, 8, 1.0), 2.0)
    assert res.delta is None and res.within_budget


@pytest.mark.parametrize("scheme", ["units", "two-stage"])
def test_build_constant(scheme):
    net = build_approximant(CosineSeries.constant(2, 1.5), 16, scheme=scheme)
    assert net.width == 0 and net.c == 1.5


def test_build_rejects_narrow():
    with pytest.raises(ValueError):
        build_approximant(phi((1,)), 1)
    with pytest.raises(ValueError):
        build_approximant(phi((1,)), 8, scheme="magic")


@pytest.mark.parametrize("scheme", ["units", "two-stage"])
@pytest.mark.parametrize("activation", ["relu", "softplus"])
def test_build_example_and_membership(scheme, activation):
    u = phi((1,))
    net = build_approximant(u, 256, activation, 0, scheme=scheme)
    assert net.width <= 256 and net.is_feasible()
    assert net.budget == pytest.approx(norm(u, "barron", 2.0))
    err = h1_error(net, u, error_rules(1)[0])
    assert err <= math.sqrt(116) * (1 + PI2) / 16


@pytest.mark.parametrize("seed", range(10))
def test_build_class_membership_random(seed):
    rng = np.random.default_rng(seed)
    u = random_series(rng, 1 + seed % 3, modes=5)
    for scheme in ("units", "two-stage"):
        net = build_approximant(u, 32, "relu", seed, scheme=scheme)
        B = norm(u, "barron", 2.0)
        assert np.abs(net.gamma).sum() <= 4 * B * (1 + 1e-12)
        assert abs(net.c) <= 2 * B


def test_build_deterministic():
    u = CosineSeries(2, {(1, 0): 1.0, (1, 1): 0.5})
    a, b = build_approximant(u, 64, seed=9), build_approximant(u, 64, seed=9)
    assert a.params.ravel().tolist() == b.params.ravel().tolist()


def test_split_width():
    for m in (2, 16, 64, 1000):
        m1, m2 = split_width(m)
        assert 2 * m1 * m2 <= m or m == 2
    assert split_width(64) == (6, 5)


def test_existence_bound():
    u = phi((1,))
    assert existence_bound(u, 256) == pytest.approx(math.sqrt(116) * (1 + PI2) / 16)
    assert existence_bound(u, 100, "softplus") == pytest.approx((1 + PI2) * (6 * math.log(100) + 30) / 10)


def test_h1_error_examples():
    u = CosineSeries.constant(2, 0.7)
    net = build_approximant(u, 4)
    assert h1_error(net, u, gauss_legendre(2, 4)) <= 1e-12
    zero = TwoLayerNet(0.0, [], np.zeros((0, 1)), [], net.activation, 1.0)
    val = h1_error(zero, phi((1,)), gauss_legendre(1, 32))
    assert val == pytest.approx(math.sqrt(0.5 + PI2 / 2), rel=1e-12)
    assert val == pytest.approx(2.330, abs=2e-3)


def test_h1_error_refines():
    u = CosineSeries(1, {(1,): 1.0, (3,): 0.2})
    net = build_approximant(u, 64, seed=1)
    exact = h1_error(net, u, composite_gauss(1, 4096, 4))
    gaps = [abs(h1_error(net, u, composite_gauss(1, p, 2)) - exact) for p in (16, 64, 256)]
    assert gaps[0] >= gaps[1] >= gaps[2]


def test_error_rules_high_dimension_spread():
    u = CosineSeries(4, {(1, 0, 0, 0): 1.0, (0, 1, 1, 0): 0.5})
    net = build_approximant(u, 64, seed=2)
    rules = error_rules(4, seed=5, randomizations=3)
    mean, spread = h1_error_spread(net, u, rules)
    assert len(rules) == 3 and mean > 0 and 0 < spread < 0.1 * mean

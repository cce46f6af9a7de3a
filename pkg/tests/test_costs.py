import math

import numpy as np
import pytest
import sympy as sp

from zobandit.costs import (
    EPS_K, ConstantCost, CostFamily, CostInstance, CostSequenceSpec, Drift, LinearCost,
    QuadraticCost, constants, evaluate, generate_round, true_gradient,
)

FAMILIES = list(CostFamily)


def test_pseudo_huber_examples():
    c = CostInstance("pseudo_huber", [0.0])
    assert evaluate(c, [0.0]) == 0.0
    assert evaluate(c, [1.0]) == pytest.approx(0.41421356237309515, abs=1e-12)
    assert evaluate(CostInstance("pseudo_huber", [0.0, 0.0]), [3.0, 4.0]) == pytest.approx(math.sqrt(26) - 1, abs=1e-12)
    assert true_gradient(c, [1.0])[0] == pytest.approx(1 / math.sqrt(2), abs=1e-12)
    np.testing.assert_array_equal(true_gradient(CostInstance("pseudo_huber", [1.0, -2.0]), [1.0, -2.0]), [0.0, 0.0])


def test_pseudo_huber_matches_closed_form_far_out():
    # the kernel uses a cancellation-free rewrite; compare to the textbook form
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1000, 3)) * 50
    c = CostInstance("pseudo_huber", [0.5, 0.0, -1.0])
    d = x - c.center
    np.testing.assert_allclose(c.value(x), np.sqrt(1 + (d * d).sum(axis=1)) - 1, rtol=1e-12)


def test_dimension_mismatch():
    c = CostInstance("soft_abs", [0.0, 0.0])
    with pytest.raises(ValueError):
        evaluate(c, [1.0])
    with pytest.raises(ValueError):
        true_gradient(c, [1.0, 2.0, 3.0])


@pytest.mark.parametrize("family", FAMILIES)
def test_gradient_matches_finite_difference(family):
    rng = np.random.default_rng(2)
    c = CostInstance(family, rng.normal(size=3), scale=1.3)
    h = 1e-5
    for x in rng.normal(size=(50, 3)) * 3:
        fd = np.array([(evaluate(c, x + h * e) - evaluate(c, x - h * e)) / (2 * h) for e in np.eye(3)])
        np.testing.assert_allclose(true_gradient(c, x), fd, atol=1e-7)


def _spec(family, n=3, R=2.0, scale=1.0, drift="fixed"):
    return CostSequenceSpec(family, n, R, drift, seed=3, scale=scale)


@pytest.mark.parametrize("family", FAMILIES)
def test_gradient_bound(family):
    spec = _spec(family)
    l = constants(spec).l
    rng = np.random.default_rng(3)
    x = rng.normal(size=(100_000, 3))
    x *= (rng.uniform(0, 1e3, size=100_000) / np.linalg.norm(x, axis=1))[:, None]
    g = spec.round_gradient(spec.centers(1)[0], x)
    assert np.max(np.linalg.norm(g, axis=1)) <= l + 1e-12


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("scale", [0.5, 2.0])
def test_gradient_lipschitz(family, scale):
    spec = _spec(family, scale=scale)
    L = constants(spec).L
    c = spec.centers(1)[0]
    rng = np.random.default_rng(4)
    x = rng.normal(size=(10_000, 3)) * 3
    y = x + rng.normal(size=(10_000, 3)) * rng.choice([1e-3, 0.1, 3.0], size=(10_000, 1))
    lhs = np.linalg.norm(spec.round_gradient(c, x) - spec.round_gradient(c, y), axis=1)
    assert np.all(lhs <= L * np.linalg.norm(x - y, axis=1) + 1e-9)


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("drift", list(Drift))
def test_radial_condition(family, drift):
    spec = _spec(family, drift=drift, scale=0.7)
    K = constants(spec).K
    cs = spec.centers(200)
    rng = np.random.default_rng(5)
    x = rng.normal(size=(10_000, 3))
    r2 = rng.uniform(K, 100 * K, size=10_000) * (1 + 1e-9)
    x *= (np.sqrt(r2) / np.linalg.norm(x, axis=1))[:, None]
    theta = cs[rng.integers(0, len(cs), size=10_000)]
    inner = (x * spec.round_gradient(theta, x)).sum(axis=1)
    assert np.all(inner > 0)


@pytest.mark.parametrize("family", FAMILIES)
def test_convexity(family):
    spec = _spec(family)
    c = spec.centers(1)[0]
    rng = np.random.default_rng(6)
    x = rng.normal(size=(10_000, 3)) * 4
    y = rng.normal(size=(10_000, 3)) * 4
    lam = rng.uniform(size=(10_000, 1))
    lhs = spec.round_value(c, lam * x + (1 - lam) * y)
    rhs = lam[:, 0] * spec.round_value(c, x) + (1 - lam[:, 0]) * spec.round_value(c, y)
    assert np.all(lhs <= rhs + 1e-9)


def test_constants_examples():
    assert tuple(constants(_spec("pseudo_huber", R=2.0))) == (1.0, 1.0, 4.0)
    assert constants(_spec("soft_abs", scale=0.25)).L == pytest.approx(4.0)
    assert constants(_spec("pseudo_huber", R=0.0)).K == EPS_K


def test_soft_abs_curvature_symbolic():
    # L = 1/s from the maximum of the second derivative of s*log(cosh(u/s))
    u, s = sp.symbols("u s", positive=True)
    second = sp.diff(s * sp.log(sp.cosh(u / s)), u, 2)
    assert sp.simplify(second.subs(u, 0) - 1 / s) == 0
    # and it decreases away from 0: third derivative <= 0 for u > 0
    third = sp.diff(second, u)
    assert all(float(third.subs({u: v, s: 0.7})) <= 0 for v in (0.1, 1.0, 5.0))


def test_pseudo_huber_constants_grid_search():
    # ||grad|| < 1 and (x, grad) > 0 for ||x|| > ||theta|| over a grid with ||x|| <= 100
    theta = np.array([2.0, 0.0])
    ang = np.linspace(0, 2 * np.pi, 181)
    rad = np.linspace(2.0 + 1e-6, 100, 300)
    x = (rad[:, None, None] * np.stack([np.cos(ang), np.sin(ang)], axis=-1)[None]).reshape(-1, 2)
    g = CostInstance("pseudo_huber", theta).gradient(x)
    assert np.all(np.linalg.norm(g, axis=1) < 1)
    assert np.all((x * g).sum(axis=1) > 0)


def test_generate_round_examples():
    fixed = _spec("pseudo_huber", n=2, R=1.0)
    np.testing.assert_array_equal(generate_round(fixed, 1).center, generate_round(fixed, 50).center)
    rot = _spec("pseudo_huber", n=2, R=1.0, drift="rotating")
    for t in (1, 7, 100):
        c = generate_round(rot, t).center
        np.testing.assert_allclose(c, [math.cos(0.1 * t), math.sin(0.1 * t)], atol=1e-15)
        assert np.linalg.norm(c) == pytest.approx(1.0)
    walk = CostSequenceSpec("pseudo_huber", 2, 1.0, "random_walk", seed=7)
    np.testing.assert_array_equal(generate_round(walk, 1).center, generate_round(walk, 1).center)
    with pytest.raises(ValueError):
        generate_round(fixed, 0)


@pytest.mark.parametrize("drift", list(Drift))
def test_centers_bounded_and_prefix_stable(drift):
    spec = _spec("mixture", n=4, R=1.5, drift=drift)
    long = spec.centers(3000)
    assert np.all(np.linalg.norm(long, axis=1) <= 1.5 + 1e-12)
    np.testing.assert_array_equal(spec.centers(100), long[:100])


def test_test_functions_are_flagged_inadmissible():
    assert CostInstance("pseudo_huber", [0.0]).admissible
    for c in (LinearCost([1.0]), ConstantCost(3.0, 1), QuadraticCost([0.0])):
        assert not c.admissible


def test_quadratic_smoothed_exact():
    c = QuadraticCost([1.0, 0.0, 0.0])
    v, g = c.smoothed_exact(np.array([0.0, 0.0, 0.0]), 0.5)
    assert v == pytest.approx(0.5 + 3 * 0.25 / 2)
    np.testing.assert_allclose(g, [-1.0, 0.0, 0.0])


def test_invalid_inputs():
    with pytest.raises(ValueError):
        CostInstance("cubic", [0.0])
    with pytest.raises(ValueError):
        CostInstance("pseudo_huber", [0.0], scale=0.0)
    with pytest.raises(ValueError):
        CostSequenceSpec("pseudo_huber", 2, -1.0)

import ast
import inspect

import numpy as np
import pytest

import zobandit.optimizer as optimizer_module
from zobandit.core import FeedbackMode, ScheduleParams
from zobandit.costs import CostInstance
from zobandit.optimizer import (
    EpisodeAborted, NormalStream, OptimizerState, gradient_estimate_one_point,
    gradient_estimate_two_point, sample_query, step,
)

ONE, TWO = FeedbackMode.ONE_POINT, FeedbackMode.TWO_POINT


class CountingEnv:
    """Bandit access to a fixed cost, counting every query."""

    def __init__(self, cost):
        self.cost = cost
        self.calls = 0

    def query(self, t, points):
        self.calls += 1
        return self.cost.value(points)


class FixedDraw:
    def __init__(self, z):
        self.z = np.asarray(z, dtype=float)

    def draw(self):
        return self.z


def test_one_point_estimate_examples():
    np.testing.assert_array_equal(gradient_estimate_one_point(0.0, [1.0, 2.0], [0.0, 0.0], 0.5), [0.0, 0.0])
    np.testing.assert_allclose(gradient_estimate_one_point(2.0, [0.5, -0.5], [0.0, 0.0], 0.5), [4.0, -4.0])
    np.testing.assert_array_equal(gradient_estimate_one_point(7.3, [1.0, 2.0], [1.0, 2.0], 0.3), [0.0, 0.0])


def test_two_point_estimate_examples():
    np.testing.assert_array_equal(gradient_estimate_two_point(1.2, 1.2, [0.3], [0.0], 0.5), [0.0])
    np.testing.assert_allclose(gradient_estimate_two_point(1.5, 1.0, [0.2], [0.0], 0.5), [0.4])


@pytest.mark.parametrize("sigma", [0.0, -1.0])
def test_estimates_reject_nonpositive_sigma(sigma):
    with pytest.raises(ValueError):
        gradient_estimate_one_point(1.0, [1.0], [0.0], sigma)
    with pytest.raises(ValueError):
        gradient_estimate_two_point(1.0, 0.0, [1.0], [0.0], sigma)


def test_estimate_dimension_mismatch():
    with pytest.raises(ValueError):
        gradient_estimate_one_point(1.0, [1.0, 2.0], [0.0], 1.0)


def test_two_point_linear_estimate_is_unbiased():
    rng = np.random.default_rng(0)
    g = np.array([0.6, -0.8])
    mu, sigma, N = np.array([1.0, 2.0]), 0.4, 10**6
    x = mu + sigma * rng.standard_normal((N, 2))
    est = gradient_estimate_two_point(x @ g, mu @ g, x, mu, sigma)
    se = est.std(axis=0, ddof=1) / np.sqrt(N)
    assert np.all(np.abs(est.mean(axis=0) - g) < 4 * se)


def test_sample_query_moments_and_determinism():
    p = ScheduleParams(0.5, 1.0, 2, TWO)  # sigma_1 = 2^-1 = 0.5
    # 1000 episodes x 1000 draws = 10^6 samples
    st = OptimizerState.start(p, [2.0, -1.0], seed=list(range(1000)))
    z = np.stack([sample_query(st) for _ in range(1000)], axis=1)
    single = OptimizerState.start(p, [2.0, -1.0], seed=3)
    np.testing.assert_array_equal(z[3, :5], [sample_query(single) for _ in range(5)])
    z = z.reshape(-1, 2)
    N = z.shape[0]
    mean_se = z.std(axis=0, ddof=1) / np.sqrt(N)
    assert np.all(np.abs(z.mean(axis=0) - [2.0, -1.0]) < 4 * mean_se)
    var_se = np.sqrt(2 * 0.25**2 / (N - 1))
    assert np.all(np.abs(z.var(axis=0, ddof=1) - 0.25) < 4 * var_se)


def test_step_hand_example():
    p = ScheduleParams(0.7, 0.1, 1, ONE)  # alpha_1 = sigma_1 = 1
    st = OptimizerState(mu=np.array([1.0]), params=p, rng=FixedDraw([0.5]))
    env = CountingEnv(CostInstance("pseudo_huber", [0.0]))
    st, out = step(st, env)
    assert out.cost_at_query[()] == pytest.approx(0.802776, abs=1e-6)
    assert st.mu[0] == pytest.approx(0.598612, abs=1e-6)
    assert st.t == 2
    assert out.mean_query is None and out.cost_at_mean is None
    assert env.calls == 1


def test_two_point_constant_cost_freezes_mean():
    from zobandit.costs import ConstantCost

    p = ScheduleParams(0.5, 0.25, 2, TWO)
    st = OptimizerState.start(p, [0.3, -4.0], seed=1)
    env = CountingEnv(ConstantCost(5.0, 2))
    for _ in range(200):
        st, out = step(st, env)
        np.testing.assert_array_equal(st.mu, [0.3, -4.0])
        assert out.mean_query is not None
    assert env.calls == 400


@pytest.mark.parametrize("mode", [ONE, TWO])
def test_update_identity(mode):
    p = ScheduleParams(0.7, 0.1, 3, mode)
    st = OptimizerState.start(p, [1.0, -2.0, 0.5], seed=9)
    env = CountingEnv(CostInstance("soft_abs", [0.2, 0.1, -0.3]))
    for _ in range(500):
        mu = st.mu.copy()
        st, out = step(st, env)
        np.testing.assert_array_equal(out.next_mu, mu - out.alpha * out.gradient_estimate)
        np.testing.assert_allclose(out.next_mu + out.alpha * out.gradient_estimate, mu, rtol=0, atol=4 * np.spacing(np.abs(mu).max() + 1))


def test_nonfinite_cost_aborts():
    class NanEnv:
        def query(self, t, points):
            return np.nan if t == 3 else 1.0

    st = OptimizerState.start(ScheduleParams(0.7, 0.1, 1), [0.0], seed=0)
    step(st, NanEnv())
    step(st, NanEnv())
    with pytest.raises(EpisodeAborted) as info:
        step(st, NanEnv())
    assert info.value.t == 3


def test_env_failure_propagates():
    class Broken:
        def query(self, t, points):
            raise RuntimeError("oracle down")

    st = OptimizerState.start(ScheduleParams(0.7, 0.1, 1), [0.0], seed=0)
    with pytest.raises(RuntimeError, match="oracle down"):
        step(st, Broken())


@pytest.mark.parametrize("mode", [ONE, TWO])
def test_batched_rows_match_single_runs(mode):
    p = ScheduleParams(0.7, 0.1, 2, mode)
    env = CountingEnv(CostInstance("pseudo_huber", [1.0, 0.0]))
    batch = OptimizerState.start(p, [3.0, 3.0], seed=[4, 11, 2])
    for _ in range(3000):
        step(batch, env)
    for row, seed in enumerate([4, 11, 2]):
        single = OptimizerState.start(p, [3.0, 3.0], seed=seed)
        for _ in range(3000):
            step(single, env)
        np.testing.assert_array_equal(single.mu, batch.mu[row])


def test_stream_block_size_does_not_change_draws():
    a = NormalStream.for_seeds([1, 2], 3, block=7)
    b = NormalStream.for_seeds([1, 2], 3, block=2048)
    for _ in range(50):
        np.testing.assert_array_equal(a.draw(), b.draw())


def test_learner_module_has_no_oracle_references():
    tree = ast.parse(inspect.getsource(optimizer_module))
    names = set()
    for node in ast.walk(tree):
        if isinstance(node, ast.ImportFrom):
            names.add(node.module)
            names.update(a.name for a in node.names)
        elif isinstance(node, ast.Import):
            names.update(a.name for a in node.names)
        elif isinstance(node, ast.Name):
            names.add(node.id)
        elif isinstance(node, ast.Attribute):
            names.add(node.attr)
    forbidden = {"true_gradient", "gradient", "round_gradient", "smoothed_cost", "smoothed_gradient",
                 "reference_gradient", "zobandit.smoothing", "zobandit.costs"}
    assert not names & forbidden

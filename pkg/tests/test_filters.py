import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import trapezoid

from forgetbayes.filters import (
    DirichletState,
    FilterSpec,
    GaussianState,
    Normal,
    discount_dirichlet,
    discount_gaussian,
    exact_predictive,
    predictive_dirichlet,
    predictive_gaussian,
    predictive_series,
    sliding_window_step,
    step,
    update_dirichlet,
    update_gaussian,
)

gammas = st.floats(1e-6, 1.0)


# -- Dirichlet ------------------------------------------------------------------


def test_discount_dirichlet_examples():
    assert discount_dirichlet(DirichletState([3, 1]), 0.5) == DirichletState([2, 1])
    s = DirichletState([0.3, 4.7, 2.0])
    assert discount_dirichlet(s, 1.0) is s
    assert discount_dirichlet(DirichletState([1, 1, 1]), 0.3) == DirichletState([1, 1, 1])


def test_discount_matches_density_power():
    # Oracle: Dir(alpha)^gamma has log-density gamma * sum((alpha_k - 1) log theta_k) + const.
    alpha = np.array([3.5, 1.2, 0.7])
    gamma = 0.37
    rng = np.random.default_rng(1)
    thetas = rng.dirichlet([1, 1, 1], size=5)
    powered = gamma * (np.log(thetas) @ (alpha - 1))
    new = discount_dirichlet(DirichletState(alpha), gamma).alpha
    via_state = np.log(thetas) @ (new - 1)
    diffs = powered - via_state
    np.testing.assert_allclose(diffs, 0.0, atol=1e-12)


def test_update_dirichlet_examples():
    assert update_dirichlet(DirichletState([2, 1]), 1) == DirichletState([3, 1])
    assert update_dirichlet(DirichletState([1.5, 1.5]), 2) == DirichletState([1.5, 2.5])
    composed = update_dirichlet(discount_dirichlet(DirichletState([2, 2]), 0.5), 1)
    assert composed == DirichletState([2.5, 1.5])


@pytest.mark.parametrize("obs", [0, 3, -1, 1.5, True])
def test_update_dirichlet_rejects_out_of_range(obs):
    with pytest.raises(ValueError):
        update_dirichlet(DirichletState([1, 1]), obs)


def test_predictive_dirichlet_examples():
    np.testing.assert_allclose(predictive_dirichlet(DirichletState([2, 1, 1])), [0.5, 0.25, 0.25])
    np.testing.assert_allclose(predictive_dirichlet(DirichletState([1, 1])), [0.5, 0.5])
    np.testing.assert_allclose(predictive_dirichlet(DirichletState([7, 1])), [0.875, 0.125])


@given(st.lists(st.floats(0.01, 1e3), min_size=2, max_size=8))
def test_predictive_dirichlet_sums_to_one(alpha):
    assert abs(predictive_dirichlet(DirichletState(alpha)).sum() - 1.0) <= 1e-12


@pytest.mark.parametrize("alpha", [[1.0], [1.0, 0.0], [1.0, -2.0], [1.0, math.nan], [[1, 1]]])
def test_dirichlet_state_invariants(alpha):
    with pytest.raises(ValueError):
        DirichletState(alpha)


def test_states_are_not_mutated():
    s = DirichletState([2.0, 1.0])
    update_dirichlet(s, 1)
    discount_dirichlet(s, 0.5)
    assert s.alpha.tolist() == [2.0, 1.0]
    with pytest.raises(ValueError):
        s.alpha[0] = 5.0


@settings(max_examples=300)
@given(alpha=st.lists(st.floats(0.5, 50), min_size=2, max_size=6), g1=gammas, g2=gammas)
def test_dirichlet_power_identity(alpha, g1, g2):
    s = DirichletState(alpha)
    twice = discount_dirichlet(discount_dirichlet(s, g1), g2).alpha
    once = discount_dirichlet(s, g1 * g2).alpha
    np.testing.assert_array_max_ulp(twice, once, maxulp=4)


@given(alpha=st.lists(st.floats(0.5, 10), min_size=2, max_size=6))
def test_memoryless_limit(alpha):
    out = discount_dirichlet(DirichletState(alpha), 1e-6).alpha
    assert np.max(np.abs(out - 1.0)) <= 1e-5


# -- Gaussian -------------------------------------------------------------------


def test_discount_gaussian_examples():
    assert discount_gaussian(GaussianState(0, 1), 0.25) == GaussianState(0, 4)
    s = GaussianState(1.3, 0.2)
    assert discount_gaussian(s, 1.0) is s
    assert discount_gaussian(GaussianState(5, 2), 0.5) == GaussianState(5, 4)


@settings(max_examples=300)
@given(var=st.floats(1e-6, 1e6), g1=gammas, g2=gammas)
def test_gaussian_power_identity(var, g1, g2):
    twice = discount_gaussian(discount_gaussian(GaussianState(0.0, var), g1), g2).variance
    np.testing.assert_array_max_ulp(twice, var / (g1 * g2), maxulp=4)


def test_update_gaussian_examples():
    out = update_gaussian(GaussianState(0, 2), 2, 2)
    assert out.mean == pytest.approx(1.0) and out.variance == pytest.approx(1.0)
    out = update_gaussian(GaussianState(0, 1), 4, 1)
    assert out.mean == pytest.approx(2.0) and out.variance == pytest.approx(0.5)
    mu, tau2, s2 = 3.1, 0.7, 2.3
    out = update_gaussian(GaussianState(mu, tau2), mu, s2)
    assert out.mean == pytest.approx(mu, rel=1e-15)
    assert out.variance == pytest.approx(tau2 * s2 / (tau2 + s2), rel=1e-14)


@pytest.mark.parametrize("x", [math.nan, math.inf])
def test_update_gaussian_rejects_nonfinite(x):
    with pytest.raises(ValueError):
        update_gaussian(GaussianState(0, 1), x, 1.0)


@pytest.mark.parametrize(
    "mu,tau2,x,s2",
    [(0.0, 2.0, 2.0, 2.0), (1.5, 0.3, -4.0, 1.7), (-20.0, 9.0, 3.0, 0.05), (4.0, 1e-3, 4.5, 10.0)],
)
def test_update_gaussian_matches_grid_posterior(mu, tau2, x, s2):
    tau = math.sqrt(tau2)
    theta = np.linspace(mu - 10 * tau, mu + 10 * tau, 100_000)
    logp = -0.5 * (theta - mu) ** 2 / tau2 - 0.5 * (x - theta) ** 2 / s2
    dens = np.exp(logp - logp.max())
    z = trapezoid(dens, theta)
    mean = trapezoid(theta * dens, theta) / z
    var = trapezoid((theta - mean) ** 2 * dens, theta) / z
    out = update_gaussian(GaussianState(mu, tau2), x, s2)
    assert out.mean == pytest.approx(mean, rel=1e-4, abs=1e-4 * tau)
    assert out.variance == pytest.approx(var, rel=1e-4)


def test_predictive_gaussian_examples():
    assert predictive_gaussian(GaussianState(0, 1), 1) == Normal(0, 2)
    m, v = predictive_gaussian(GaussianState(3, 1e-12), 1)
    assert m == 3 and v == pytest.approx(1.0)
    assert predictive_gaussian(GaussianState(-2, 0.5), 1.5) == Normal(-2, 2)


def test_gaussian_state_invariants():
    for bad in [(0, 0), (0, -1), (0, math.inf), (math.nan, 1)]:
        with pytest.raises(ValueError):
            GaussianState(*bad)


# -- spec and stepping ----------------------------------------------------------------


def test_spec_validation():
    with pytest.raises(ValueError):
        FilterSpec.categorical(2, gamma=0.5, window=3)
    with pytest.raises(ValueError):
        FilterSpec.categorical(2, gamma=1e-7)
    with pytest.raises(ValueError):
        FilterSpec.categorical(2, gamma=1.5)
    with pytest.raises(ValueError):
        FilterSpec("gaussian", GaussianState(0, 1))
    with pytest.raises(ValueError):
        FilterSpec("categorical", GaussianState(0, 1))
    with pytest.raises(ValueError):
        FilterSpec.categorical(2, window=0)
    assert FilterSpec.categorical(2, gamma=1e-6).gamma == 1e-6


def test_step_counts_at_gamma_one():
    spec = FilterSpec.categorical(2)
    state = spec.prior
    seen = [state.alpha.tolist()]
    for obs in (1, 1, 2):
        state, _ = step(spec, state, obs)
        seen.append(state.alpha.tolist())
    assert seen == [[1, 1], [2, 1], [3, 1], [3, 2]]


def test_step_discounts_then_updates():
    spec = FilterSpec.categorical(2, gamma=0.5)
    s1, p1 = step(spec, spec.prior, 1)
    assert s1 == DirichletState([2, 1])
    np.testing.assert_allclose(p1, [0.5, 0.5])
    s2, p2 = step(spec, s1, 1)
    assert s2 == DirichletState([2.5, 1])
    np.testing.assert_allclose(p2, [2 / 3, 1 / 3])


def test_gaussian_step_example():
    spec = FilterSpec.gaussian(0.0, 1.0, obs_variance=2.0, gamma=0.5)
    state, pred = step(spec, spec.prior, 2.0)
    assert pred == Normal(0.0, 3.0)
    assert state.mean == pytest.approx(1.0) and state.variance == pytest.approx(1.0)


def test_step_rejects_mismatch():
    spec = FilterSpec.categorical(3)
    with pytest.raises(ValueError):
        step(spec, DirichletState([1, 1]), 1)
    with pytest.raises(ValueError):
        step(spec, GaussianState(0, 1), 1)
    with pytest.raises(ValueError):
        step(FilterSpec.categorical(3, window=2), spec.prior, 1)


def test_sliding_window_example():
    spec = FilterSpec.categorical(2, window=2)
    buf = ()
    for obs in (1, 1, 2, 2):
        buf, _ = sliding_window_step(spec, buf, obs)
    assert buf == (2, 2)
    _, pred = sliding_window_step(spec, buf, 1)
    np.testing.assert_allclose(pred, [0.25, 0.75])


def test_wide_window_equals_exact_filter(rng):
    obs = rng.integers(1, 4, size=40)
    wide = FilterSpec.categorical(3, window=100)
    exact = FilterSpec.categorical(3)
    buf, state = (), exact.prior
    for x in obs:
        buf, p_win = sliding_window_step(wide, buf, x)
        state, p_exact = step(exact, state, x)
        np.testing.assert_array_equal(p_win, p_exact)


def test_window_of_one_only_sees_last(rng):
    spec = FilterSpec.categorical(3, window=1)
    for _ in range(20):
        hist = tuple(rng.integers(1, 4, size=rng.integers(1, 10)))
        buf = ()
        for x in hist:
            buf, _ = sliding_window_step(spec, buf, x)
        _, pred = sliding_window_step(spec, buf, 1)
        np.testing.assert_array_equal(pred, exact_predictive(spec, [hist[-1]]))


# -- whole-sequence predictives -----------------------------------------------------


def _stepwise(spec, obs):
    state, preds = spec.prior, []
    for x in obs:
        state, p = step(spec, state, x)
        preds.append(np.asarray(p, dtype=float))
    return np.array(preds)


def _windowed(spec, obs):
    buf, preds = (), []
    for x in obs:
        buf, p = sliding_window_step(spec, buf, x)
        preds.append(np.asarray(p, dtype=float))
    return np.array(preds)


@pytest.mark.parametrize("gamma", [1.0, 0.97, 0.6, 0.05, 1e-6])
def test_series_matches_stepping_categorical(rng, gamma):
    spec = FilterSpec.categorical(alpha=[0.7, 2.0, 1.3, 1.0], gamma=gamma)
    obs = rng.integers(1, 5, size=300)
    np.testing.assert_allclose(predictive_series(spec, obs), _stepwise(spec, obs), rtol=1e-11, atol=1e-14)


@pytest.mark.parametrize("gamma", [1.0, 0.9, 0.3, 1e-3])
def test_series_matches_stepping_gaussian(rng, gamma):
    spec = FilterSpec.gaussian(0.5, 4.0, obs_variance=1.5, gamma=gamma)
    obs = rng.normal(2.0, 1.0, size=300)
    np.testing.assert_allclose(predictive_series(spec, obs), _stepwise(spec, obs), rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("window", [1, 3, 17, 500])
def test_series_matches_window_stepping(rng, window):
    spec = FilterSpec.categorical(3, window=window)
    obs = rng.integers(1, 4, size=120)
    np.testing.assert_allclose(predictive_series(spec, obs), _windowed(spec, obs), rtol=1e-13)
    gspec = FilterSpec.gaussian(0.0, 10.0, obs_variance=2.0, window=window)
    xs = rng.normal(size=120)
    np.testing.assert_allclose(predictive_series(gspec, xs), _windowed(gspec, xs), rtol=1e-10, atol=1e-12)


def test_series_rejects_bad_labels():
    spec = FilterSpec.categorical(3)
    for bad in ([0, 1], [1, 4], [1.5, 2]):
        with pytest.raises(ValueError):
            predictive_series(spec, bad)


def test_series_empty():
    assert predictive_series(FilterSpec.categorical(3), []).shape == (0, 3)

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from forgetbayes.calibration import (
    SubjectTrace,
    calibrate_gamma,
    calibration_grid,
    floor_probabilities,
    kl_categorical,
    kl_gaussian,
    mean_update_divergence,
    minimize_discount,
    observations_from_records,
    subject_from_records,
    subject_to_records,
)
from forgetbayes.environments import SegmentSpec, gen_biased_die
from forgetbayes.filters import FilterSpec, predictive_series


def replay(spec, obs, gamma):
    return SubjectTrace.categorical(predictive_series(spec.with_gamma(gamma), obs))


def die_obs(seed, segments=((1000, (0.6, 0.2, 0.1, 0.1)), (1000, (0.1, 0.1, 0.2, 0.6)))):
    return gen_biased_die([SegmentSpec(d, p) for d, p in segments], seed).observations


# -- divergences ---------------------------------------------------------------------


def test_kl_categorical_examples():
    assert kl_categorical([0.5, 0.5], [0.5, 0.5]) == 0.0
    assert kl_categorical([1, 0], [0.5, 0.5]) == pytest.approx(0.693147, abs=1e-6)
    assert kl_categorical([0.75, 0.25], [0.5, 0.5]) == pytest.approx(0.130812, abs=1e-6)
    with pytest.raises(ValueError):
        kl_categorical([0.5, 0.5], [0.2, 0.3, 0.5])


def test_kl_gaussian_examples():
    assert kl_gaussian((1.5, 2.0), (1.5, 2.0)) == 0.0
    assert kl_gaussian((0, 1), (1, 1)) == pytest.approx(0.5, abs=1e-12)
    assert kl_gaussian((0, 1), (0, 4)) == pytest.approx(math.log(2) + 1 / 8 - 1 / 2, abs=1e-12)
    assert kl_gaussian((0, 1), (0, 4)) == pytest.approx(0.318147, abs=1e-6)
    with pytest.raises(ValueError):
        kl_gaussian((0, 0), (0, 1))


def _simplex(k):
    return arrays(float, k, elements=st.floats(1e-3, 1.0)).map(lambda v: v / v.sum())


@settings(max_examples=200)
@given(st.integers(2, 6).flatmap(lambda k: st.tuples(_simplex(k), _simplex(k))))
def test_kl_categorical_nonneg_and_identity(pq):
    p, q = pq
    assert kl_categorical(p, q) >= 0
    assert kl_categorical(p, p) == 0
    # independent route: plain sum, no special functions
    assert kl_categorical(p, q) == pytest.approx(max(0.0, float(np.sum(p * np.log(p / q)))), abs=1e-12)


@given(
    st.floats(-50, 50), st.floats(1e-3, 1e3), st.floats(-50, 50), st.floats(1e-3, 1e3)
)
def test_kl_gaussian_nonneg_and_identity(m1, v1, m2, v2):
    assert kl_gaussian((m1, v1), (m2, v2)) >= 0
    assert kl_gaussian((m1, v1), (m1, v1)) == 0


def test_kl_gaussian_matches_quadrature():
    from scipy.integrate import quad
    from scipy.stats import norm

    p, q = (0.3, 1.7), (-1.1, 0.6)
    P, Q = norm(p[0], math.sqrt(p[1])), norm(q[0], math.sqrt(q[1]))
    val, _ = quad(lambda x: P.pdf(x) * (P.logpdf(x) - Q.logpdf(x)), -30, 30)
    assert kl_gaussian(p, q) == pytest.approx(val, rel=1e-8)


# -- ingestion -----------------------------------------------------------------------


def test_floor_leaves_clean_rows_untouched():
    rows = np.array([[0.1, 0.2, 0.7], [1.0, 0.0, 0.0]])
    out = floor_probabilities(rows)
    assert out[0].tolist() == rows[0].tolist()
    assert np.all(out[1] >= 1e-12)
    assert abs(out[1].sum() - 1) <= 1e-9


def test_floor_rejects_bad_rows():
    with pytest.raises(ValueError, match="step 2"):
        floor_probabilities([[0.5, 0.5], [0.5, 0.4]])
    with pytest.raises(ValueError):
        floor_probabilities([[1.2, -0.2]])
    with pytest.raises(ValueError):
        SubjectTrace.gaussian([0, 1], [1, 0])


@given(arrays(float, (5, 4), elements=st.floats(0, 1)).filter(lambda a: np.all(a.sum(1) > 0)))
def test_floor_invariants(raw):
    rows = raw / raw.sum(axis=1, keepdims=True)
    out = SubjectTrace.categorical(rows).values
    assert np.all(out >= 1e-12)
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-9)


def test_subject_records_round_trip():
    sub = SubjectTrace.categorical([[0.25, 0.75], [0.5, 0.5]])
    back = subject_from_records(subject_to_records(sub))
    assert np.array_equal(back.values, sub.values)
    g = SubjectTrace.gaussian([0.5, -1.0], [1.0, 2.0])
    assert np.array_equal(subject_from_records(subject_to_records(g)).values, g.values)
    with pytest.raises(ValueError):
        subject_from_records([{"t": 2, "dist": [0.5, 0.5]}])
    with pytest.raises(ValueError):
        subject_from_records([{"t": 1, "dist": [0.5, 0.5]}, {"t": 2, "dist": [0.2, 0.3, 0.5]}])
    assert observations_from_records([{"header": {}}, {"t": 1, "obs": 2}, {"t": 2, "obs": 1}]) == [2, 1]


# -- objective -----------------------------------------------------------------------


def test_objective_examples():
    spec = FilterSpec.categorical(2)
    sub = SubjectTrace.categorical([[0.75, 0.25]])
    assert mean_update_divergence(sub, [1], spec, 1.0) == pytest.approx(0.130812, abs=1e-6)

    obs = die_obs(3, ((250, (0.9, 0.1)), (250, (0.1, 0.9))))
    spec = FilterSpec.categorical(2)
    for g in (1.0, 0.7, 0.31):
        assert mean_update_divergence(replay(spec, obs, g), obs, spec, g) == 0.0
    assert mean_update_divergence(replay(spec, obs, 0.5), obs, spec, 1.0) > 0.001


def test_objective_is_deterministic():
    spec = FilterSpec.categorical(4)
    obs = die_obs(5)
    sub = replay(spec, obs, 0.6)
    values = {mean_update_divergence(sub, obs, spec, 0.83) for _ in range(5)}
    assert len(values) == 1


def test_objective_matches_stepwise_oracle():
    # route 2: explicit discount/update loop with hand-rolled KL
    spec = FilterSpec.categorical(3)
    obs = die_obs(8, ((60, (0.2, 0.3, 0.5)),))
    rng = np.random.default_rng(0)
    sub = rng.dirichlet([2, 2, 2], size=obs.size)
    gamma = 0.77
    alpha = np.ones(3)
    total = 0.0
    for p, x in zip(sub, obs):
        q = alpha / alpha.sum()
        total += float(np.sum(p * np.log(p / q)))
        alpha = gamma * (alpha - 1) + 1
        alpha[x - 1] += 1
    got = mean_update_divergence(SubjectTrace.categorical(sub), obs, spec, gamma)
    assert got == pytest.approx(total / obs.size, rel=1e-12)


def test_objective_rejects_mismatch():
    spec = FilterSpec.categorical(2)
    with pytest.raises(ValueError):
        mean_update_divergence(SubjectTrace.categorical([[0.5, 0.5]] * 3), [1, 2], spec, 1.0)
    with pytest.raises(ValueError):
        mean_update_divergence(SubjectTrace.gaussian([0.0], [1.0]), [1], spec, 1.0)
    with pytest.raises(ValueError):
        mean_update_divergence(SubjectTrace.categorical([[0.2, 0.3, 0.5]]), [1], spec, 1.0)


# -- search --------------------------------------------------------------------------


def test_grid_shape():
    g = calibration_grid()
    assert len(g) == 21 and g[0] == 1e-3 and g[-1] == 1.0
    assert g[1:] == pytest.approx([0.05 * i for i in range(1, 21)])


@pytest.mark.parametrize("target", [0.0123, 0.37, 0.5, 0.8123, 0.999])
def test_minimize_quadratic(target):
    res = minimize_discount(lambda g: (g - target) ** 2, tol=1e-6)
    assert abs(res.gamma_star - target) < 1e-5
    assert res.status == "ok"
    assert res.evaluations == len(res.search_log)
    a, b = res.final_bracket
    assert b - a < 1e-6


def test_brackets_nested_and_hold_grid_minimum():
    f = lambda g: math.sin(9 * g) + 0.3 * g  # noqa: E731  multimodal on [0, 1]
    res = minimize_discount(f)
    grid_log = res.search_log[:21]
    g_min = min(grid_log, key=lambda gv: gv[1])[0]
    a0, b0 = res.brackets[0]
    assert a0 <= g_min <= b0
    for (a, b), (c, d) in zip(res.brackets, res.brackets[1:]):
        assert a <= c <= d <= b
    assert res.objective_value == min(v for _, v in res.search_log)


def test_flat_landscape_status():
    res = minimize_discount(lambda g: 0.25)
    assert res.status == "flat" and res.gamma_star == 1.0 and res.evaluations == 21


def test_search_argument_checks():
    with pytest.raises(ValueError):
        minimize_discount(lambda g: g, tol=0)
    with pytest.raises(ValueError):
        minimize_discount(lambda g: g, floor=1e-7)


def test_parallel_grid_matches_serial():
    spec = FilterSpec.categorical(4)
    obs = die_obs(11)
    sub = replay(spec, obs, 0.66)
    a = calibrate_gamma(sub, obs, spec)
    b = calibrate_gamma(sub, obs, spec, workers=4)
    assert a == b


def test_calibration_rejects_short_trace():
    spec = FilterSpec.categorical(2)
    with pytest.raises(ValueError, match="at least 10"):
        calibrate_gamma(SubjectTrace.categorical([[0.5, 0.5]] * 9), [1] * 9, spec)


def test_recovers_replayed_gamma():
    spec = FilterSpec.categorical(4)
    obs = die_obs(2024)
    res = calibrate_gamma(replay(spec, obs, 0.8), obs, spec)
    assert abs(res.gamma_star - 0.8) <= 0.02
    assert res.objective_value < 1e-10
    recomputed = mean_update_divergence(replay(spec, obs, 0.8), obs, spec, res.gamma_star)
    assert abs(recomputed - res.objective_value) <= 1e-10


def test_recovers_gamma_one_on_stationary_trace():
    spec = FilterSpec.categorical(4)
    obs = die_obs(9, ((2000, (0.4, 0.3, 0.2, 0.1)),))
    res = calibrate_gamma(replay(spec, obs, 1.0), obs, spec)
    assert 0.98 <= res.gamma_star <= 1.0


def test_gaussian_calibration():
    rng = np.random.default_rng(4)
    obs = np.cumsum(rng.normal(0, 0.3, 800)) + rng.normal(0, 1, 800)
    spec = FilterSpec.gaussian(0.0, 100.0, obs_variance=1.0)
    model = predictive_series(spec.with_gamma(0.9), obs)
    res = calibrate_gamma(SubjectTrace.gaussian(model[:, 0], model[:, 1]), obs, spec)
    assert abs(res.gamma_star - 0.9) <= 0.01


@pytest.mark.parametrize("g_true", [0.137, 0.731, 0.987])
def test_recovers_off_grid_gamma(g_true):
    spec = FilterSpec.categorical(4)
    obs = die_obs(77)
    res = calibrate_gamma(replay(spec, obs, g_true), obs, spec, tol=1e-6)
    assert abs(res.gamma_star - g_true) < 1e-4
    assert res.evaluations > 21

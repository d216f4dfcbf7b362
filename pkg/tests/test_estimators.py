import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shiftlab.errors import DegenerateEstimateError, InvalidInputError
from shiftlab.estimators import (
    ADAPTIVE_CONTRAST,
    LINEARIZED_FULL,
    LINEARIZED_ORACLE,
    LOCAL_CORRECTED,
    LOCAL_KNOWN,
    LOCAL_NAIVE,
    ORACLE_ML,
    EstimatorSpec,
    SearchOptions,
    closed_form_risk_linearized,
    contrast,
    contrast_derivative,
    derivative_estimate_curve,
    derivative_mise,
    estimate,
    estimate_batch,
    linearized_oracle,
)
from shiftlab.signal_model import (
    FULL,
    LOCAL,
    ObservationBatch,
    ParamDomain,
    SequenceObservation,
    SobolevBall,
    make_signal,
    simulate,
    simulate_batch,
    sobolev_boundary_signal,
)
from shiftlab.streams import RandomStream
from shiftlab.weights import WeightSequence, projection_weights, risk_functional

DOMAIN = ParamDomain(0.2)


def full_obs(f, theta, eps=0.0, K=None, seed=0):
    f = make_signal(f)
    return simulate(f, theta, eps, K or f.K_f, FULL, RandomStream(seed))


def test_spec_validation_and_round_trip():
    with pytest.raises(InvalidInputError):
        EstimatorSpec("nope")
    with pytest.raises(InvalidInputError):
        EstimatorSpec(ADAPTIVE_CONTRAST)
    spec = EstimatorSpec(LINEARIZED_ORACLE, projection_weights(2, 3), make_signal([1.0, 0.2]))
    assert spec.oracle_flag and spec.model == FULL
    assert EstimatorSpec.from_dict(spec.to_dict()) == spec
    assert EstimatorSpec(LOCAL_NAIVE, projection_weights(1, 1)).model == LOCAL
    assert not EstimatorSpec(ADAPTIVE_CONTRAST, projection_weights(1, 1)).oracle_flag


def test_search_options_grid():
    assert SearchOptions().resolve(10) == 1024
    assert SearchOptions().resolve(100) == 1600
    with pytest.raises(InvalidInputError):
        SearchOptions(grid_points=100).resolve(10)


def test_contrast_by_hand():
    obs = SequenceObservation(FULL, 0.1, [1.0, 0.5], [0.2, -0.3])
    h = WeightSequence([1.0, 0.5])
    tau = 0.07
    c1, s1 = math.cos(2 * math.pi * tau), math.sin(2 * math.pi * tau)
    c2, s2 = math.cos(4 * math.pi * tau), math.sin(4 * math.pi * tau)
    expected = (1.0 * c1 + 0.2 * s1) ** 2 + 0.5 * (0.5 * c2 - 0.3 * s2) ** 2
    assert contrast(obs, h, tau) == pytest.approx(expected, rel=1e-13)


@given(st.lists(st.floats(-1, 1), min_size=2, max_size=12), st.floats(-0.2, 0.2))
@settings(max_examples=50, deadline=None)
def test_contrast_derivative_matches_finite_difference(vals, tau):
    K = len(vals) // 2
    obs = SequenceObservation(FULL, 0.1, vals[:K], vals[K:2 * K])
    h = WeightSequence(np.linspace(1, 0.2, K))
    step = 1e-6
    fd = (contrast(obs, h, tau + step) - contrast(obs, h, tau - step)) / (2 * step)
    assert contrast_derivative(obs, h, tau) == pytest.approx(fd, rel=1e-5, abs=1e-6)


@given(
    st.lists(st.floats(-1, 1), min_size=0, max_size=6),
    st.floats(0.1, 1.0),
    st.floats(-0.2, 0.2),
    st.sampled_from([ADAPTIVE_CONTRAST, ORACLE_ML]),
)
@settings(max_examples=60, deadline=None)
def test_noiseless_recovery(tail, f1, theta, kind):
    f = make_signal([f1] + tail)
    obs = simulate(f, theta, 0.0, f.K_f, FULL, RandomStream(0))
    h = WeightSequence(np.r_[1.0, np.linspace(0.9, 0.1, len(tail))])
    spec = EstimatorSpec(kind, h, f)
    assert abs(estimate(spec, obs, DOMAIN) - theta) <= 1e-8


@pytest.mark.parametrize("theta", [0.2, -0.2])
def test_recovery_at_domain_boundary(theta):
    obs = full_obs([1.0, 0.3], theta)
    assert estimate(EstimatorSpec(ADAPTIVE_CONTRAST, projection_weights(2, 2)), obs, DOMAIN) == pytest.approx(
        theta, abs=1e-9)


def test_contrast_maximizer_beats_dense_grid():
    f = sobolev_boundary_signal(SobolevBall(), 8)
    h = WeightSequence(np.linspace(1, 0.3, 8))
    for seed in range(20):
        obs = simulate(f, 0.03, 0.05, 8, FULL, RandomStream(seed))
        est = estimate(EstimatorSpec(ADAPTIVE_CONTRAST, h), obs, DOMAIN)
        dense = np.linspace(-0.2, 0.2, 200001)
        vals = contrast(obs, h, dense)
        assert contrast(obs, h, est) >= vals.max() - 1e-12
        assert -0.2 <= est <= 0.2


def test_oracle_ml_maximizes_linear_objective():
    f = make_signal([0.3, 0.2, 0.1])
    for seed in range(10):
        obs = simulate(f, -0.05, 0.2, 3, FULL, RandomStream(seed))
        est = estimate(EstimatorSpec(ORACLE_ML, signal=f), obs, DOMAIN)
        grid = np.linspace(-0.2, 0.2, 100001)
        k = np.arange(1, 4)
        obj = (np.cos(2 * np.pi * np.outer(grid, k)) * obs.a + np.sin(2 * np.pi * np.outer(grid, k)) * obs.b) @ f.coeffs
        est_obj = (np.cos(2 * np.pi * k * est) * obs.a + np.sin(2 * np.pi * k * est) * obs.b) @ f.coeffs
        assert est_obj >= obj.max() - 1e-12


def test_argmax_ties_take_smallest_tau():
    # an all-zero observation makes the contrast constant
    obs = SequenceObservation(FULL, 0.1, [0.0, 0.0], [0.0, 0.0])
    assert estimate(EstimatorSpec(ADAPTIVE_CONTRAST, projection_weights(2, 2)), obs, DOMAIN) == -0.2


def test_ratio_estimators_by_hand():
    a, b = np.array([1.0, 0.5]), np.array([0.1, 0.05])
    w = 2 * np.pi * np.array([1, 2])
    h = WeightSequence([1.0, 0.5])
    eps = 0.1
    full = SequenceObservation(FULL, eps, a, b)
    loc = SequenceObservation(LOCAL, eps, a, b)
    hv = h.values
    expected = {
        LINEARIZED_FULL: np.sum(w * hv * a * b) / np.sum(w**2 * hv * (a**2 - b**2)),
        LOCAL_NAIVE: np.sum(w * hv * a * b) / np.sum(w**2 * hv**2 * a**2),
        LOCAL_CORRECTED: np.sum(w * hv * a * b) / np.sum(w**2 * hv * (a**2 - eps**2)),
    }
    for kind, value in expected.items():
        obs = full if kind == LINEARIZED_FULL else loc
        assert estimate(EstimatorSpec(kind, h), obs, DOMAIN) == pytest.approx(value, rel=1e-13)
    f = make_signal([0.9, 0.4])
    known = np.sum(w * f.coeffs * b) / np.sum(w**2 * f.coeffs**2)
    assert estimate(EstimatorSpec(LOCAL_KNOWN, signal=f), loc, DOMAIN) == pytest.approx(known, rel=1e-13)


def test_local_known_noiseless_is_exact():
    f = make_signal([0.8, 0.3, 0.1])
    obs = simulate(f, 0.12, 0.0, 3, LOCAL, RandomStream(0))
    assert estimate(EstimatorSpec(LOCAL_KNOWN, signal=f), obs, DOMAIN) == pytest.approx(0.12, rel=1e-14)


def test_degenerate_denominator():
    # X_1^2 < eps^2 makes the corrected denominator negative
    obs = SequenceObservation(LOCAL, 0.5, [0.1], [0.3])
    spec = EstimatorSpec(LOCAL_CORRECTED, WeightSequence([1.0]))
    with pytest.raises(DegenerateEstimateError) as info:
        estimate(spec, obs, DOMAIN)
    assert info.value.raw == pytest.approx(2 * np.pi * 0.03 / ((2 * np.pi) ** 2 * (0.01 - 0.25)))
    # numerator positive: boundary in the numerator's direction
    assert estimate(spec, obs, DOMAIN, on_degenerate="clamp") == 0.2
    obs = SequenceObservation(LOCAL, 0.5, [0.1], [-0.3])
    assert estimate(spec, obs, DOMAIN, on_degenerate="clamp") == -0.2


def test_ratio_estimates_clamped_to_domain():
    obs = SequenceObservation(LOCAL, 0.01, [0.1], [5.0])
    assert estimate(EstimatorSpec(LOCAL_NAIVE, WeightSequence([1.0])), obs, DOMAIN) == 0.2


def test_feasible_estimators_ignore_ground_truth():
    f = make_signal([1.0, 0.4])
    obs = simulate(f, 0.1, 0.1, 2, FULL, RandomStream(4))
    blind = SequenceObservation(FULL, 0.1, obs.a, obs.b, None)
    spec = EstimatorSpec(ADAPTIVE_CONTRAST, projection_weights(2, 2))
    assert estimate(spec, obs, DOMAIN) == estimate(spec, blind, DOMAIN)


def test_model_mismatch_rejected():
    obs = SequenceObservation(LOCAL, 0.1, [1.0], [0.1])
    with pytest.raises(InvalidInputError):
        estimate(EstimatorSpec(ADAPTIVE_CONTRAST, WeightSequence([1.0])), obs, DOMAIN)


def test_batch_matches_single_estimates():
    f = sobolev_boundary_signal(SobolevBall(), 6)
    h = WeightSequence(np.linspace(1, 0.2, 6))
    batch = simulate_batch(f.padded(6), 0.02, 0.01, FULL, 3, range(8))
    spec = EstimatorSpec(ADAPTIVE_CONTRAST, h)
    res = estimate_batch(spec, batch, DOMAIN)
    for i in range(8):
        assert res.estimate[i] == estimate(spec, batch.row(i), DOMAIN)


def test_linearized_oracle_noiseless_and_closed_form():
    f = make_signal([0.9, 0.3])
    h = WeightSequence([1.0, 0.5])
    obs = simulate(f, 0.1, 1e-12, 2, FULL, RandomStream(0))
    assert linearized_oracle(obs, h, f) == pytest.approx(0.1, abs=1e-9)
    # closed form by hand
    eps = 0.1
    w2 = (2 * np.pi * np.array([1, 2])) ** 2
    fv, hv = f.coeffs, h.values
    n1 = np.sum(w2 * fv**2)
    expected = n1 * np.sum(hv**2 * w2 * (fv**2 + eps**2)) / np.sum(hv * w2 * fv**2) ** 2
    assert closed_form_risk_linearized(f, h, eps) == pytest.approx(expected, rel=1e-13)


def test_linearized_oracle_mc_matches_closed_form():
    f = make_signal([0.5, 0.2, 0.05])
    h = WeightSequence([1.0, 0.7, 0.3])
    eps, theta, R = 0.05, 0.04, 20000
    batch = simulate_batch(f.padded(3), theta, eps, FULL, 21, range(R))
    est = estimate_batch(EstimatorSpec(LINEARIZED_ORACLE, h, f), batch, DOMAIN).estimate
    loss = (est - theta) ** 2 * np.sum((2 * np.pi * np.arange(1, 4)) ** 2 * f.coeffs**2) / eps**2
    se = loss.std(ddof=1) / math.sqrt(R)
    assert abs(loss.mean() - closed_form_risk_linearized(f, h, eps)) < 3 * se


def test_derivative_curve_noiseless_is_exact_with_unit_weights():
    f = make_signal([0.5, -0.2, 0.1])
    batch = simulate_batch(f.padded(3), 0.07, 0.0, FULL, 0, range(1))
    s = np.linspace(-0.5, 0.5, 11)
    k = np.arange(1, 4)
    exact = -math.sqrt(2) * np.sin(2 * np.pi * np.outer(s, k)) @ (2 * np.pi * k * f.coeffs)
    np.testing.assert_allclose(derivative_estimate_curve(batch, WeightSequence([1, 1, 1]), s)[0], exact,
                               atol=1e-12)


def test_derivative_mise_is_normalized_risk():
    f = make_signal([0.5, 0.2])
    h = WeightSequence([1.0, 0.4])
    n1 = np.sum((2 * np.pi * np.array([1, 2])) ** 2 * f.coeffs**2)
    assert derivative_mise(f, h, 0.1) == pytest.approx(risk_functional(f, h, 0.1) / n1)


def test_oracle_needs_signal():
    obs = full_obs([1.0], 0.1)
    with pytest.raises(InvalidInputError):
        estimate(EstimatorSpec(ORACLE_ML), obs, DOMAIN)
    with pytest.raises(InvalidInputError):
        estimate_batch(EstimatorSpec(LINEARIZED_ORACLE, WeightSequence([1.0]), make_signal([1.0])),
                       ObservationBatch.from_observation(SequenceObservation(FULL, 0.1, [1.0], [0.0])), DOMAIN)

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shiftlab.errors import InvalidInputError
from shiftlab.signal_model import (
    FULL,
    LOCAL,
    ClassParams,
    ObservationBatch,
    ParamDomain,
    SignalSpectrum,
    SobolevBall,
    check_class_F,
    check_vicinity,
    eval_signal,
    fisher_info,
    make_signal,
    noise_block,
    norms,
    simulate,
    simulate_batch,
    sobolev_boundary_signal,
)
from shiftlab.streams import RandomStream

coeff_lists = st.lists(st.floats(-2, 2, allow_nan=False), min_size=1, max_size=8)


def test_spectrum_validation():
    with pytest.raises(InvalidInputError):
        SignalSpectrum([])
    with pytest.raises(InvalidInputError):
        SignalSpectrum([1.0, float("nan")])
    f = make_signal([1.0, 0.0, 0.0])
    assert f.K_f == 3  # trailing zeros are kept
    with pytest.raises(ValueError):
        f.coeffs[0] = 2.0
    with pytest.raises(InvalidInputError):
        f.padded(2)


def test_domain_rejects_quarter_and_beyond():
    for tau0 in (0.25, 0.3, 0.0, -0.1):
        with pytest.raises(InvalidInputError, match="1/4"):
            ParamDomain(tau0)
    d = ParamDomain(0.2)
    assert d.contains(0.2) and not d.contains(0.2001)
    assert d.clamp(0.5) == 0.2


def test_class_params_emptiness():
    # ||f'||^2 >= (2 pi)^2 f_1^2 and ||f''||^2 >= ||f'||^2 make small C0 infeasible
    assert ClassParams(1.0, 1.0).is_empty
    assert not ClassParams(0.01, 10.0).is_empty


def test_norms_single_harmonic():
    n0, n1, n2 = norms(make_signal([0.0, 0.5]))
    assert n0 == pytest.approx(0.25)
    assert n1 == pytest.approx((4 * math.pi) ** 2 * 0.25)
    assert n2 == pytest.approx((4 * math.pi) ** 4 * 0.25)


@given(coeff_lists)
@settings(max_examples=40, deadline=None)
def test_norms_match_quadrature(coeffs):
    # Riemann sums over one period are exact for trigonometric polynomials of low degree
    f = make_signal(coeffs)
    M = 64
    t = np.arange(M) / M
    k = np.arange(1, f.K_f + 1)
    vals = eval_signal(f, t)
    deriv = -math.sqrt(2) * np.sin(2 * np.pi * np.outer(t, k)) @ (2 * np.pi * k * f.coeffs)
    n0, n1, _ = norms(f)
    assert np.mean(vals**2) == pytest.approx(n0, rel=1e-9, abs=1e-12)
    assert np.mean(deriv**2) == pytest.approx(n1, rel=1e-9, abs=1e-9)


@given(coeff_lists, st.floats(-3, 3), st.integers(-5, 5))
@settings(max_examples=60, deadline=None)
def test_eval_signal_periodic_and_even(coeffs, t, n):
    f = make_signal(coeffs)
    assert eval_signal(f, t + n) == pytest.approx(eval_signal(f, t), abs=1e-9)
    assert eval_signal(f, -t) == pytest.approx(eval_signal(f, t), abs=1e-9)


def test_fisher_info():
    f = make_signal([0.3, 0.1])
    assert fisher_info(f, 0.1) == pytest.approx(norms(f)[1] / 0.01)
    with pytest.raises(InvalidInputError):
        fisher_info(f, 0.0)


def test_class_and_vicinity_checks():
    f = make_signal([0.5, 0.01])
    assert check_class_F(f, ClassParams(0.2, 1e3))
    assert not check_class_F(f, ClassParams(0.3, 1e3))
    ball = SobolevBall(2, 1)
    assert check_vicinity(f, f, 1e-3, ball)
    g = make_signal([0.5, 0.011])
    assert check_vicinity(g, f, 0.01, ball)
    assert not check_vicinity(g, f, 1e-4, ball)


def test_boundary_signal_on_sphere():
    for beta, L in ((2, 1), (1.5, 3), (3, 0.5)):
        ball = SobolevBall(beta, L)
        f = sobolev_boundary_signal(ball, 16)
        assert ball.energy(f.coeffs) == pytest.approx(L, rel=1e-12)
        assert f.K_f == 16


def test_simulate_noiseless_means():
    f = make_signal([1.0, 0.5])
    theta = 0.1
    obs = simulate(f, theta, 0.0, 4, FULL, RandomStream(3))
    k = np.arange(1, 5)
    fv = np.array([1.0, 0.5, 0, 0])
    np.testing.assert_allclose(obs.a, fv * np.cos(2 * np.pi * k * theta))
    np.testing.assert_allclose(obs.b, fv * np.sin(2 * np.pi * k * theta))
    loc = simulate(f, theta, 0.0, 2, LOCAL, RandomStream(3))
    np.testing.assert_allclose(loc.b, theta * 2 * np.pi * np.array([1, 2]) * np.array([1.0, 0.5]))


def test_simulate_errors():
    f = make_signal([1.0, 0.5, 0.2])
    with pytest.raises(InvalidInputError):
        simulate(f, 0.1, 0.1, 2, FULL, RandomStream(0))
    with pytest.raises(InvalidInputError):
        simulate(f, 0.3, 0.1, 3, FULL, RandomStream(0))
    with pytest.raises(InvalidInputError):
        simulate(f, 0.1, -1.0, 3, FULL, RandomStream(0))


def test_simulate_noise_moments():
    # per-coordinate noise over many replications has mean 0 and variance eps^2
    f = make_signal([0.7])
    eps, theta = 0.3, 0.05
    batch = simulate_batch(f.padded(2), theta, eps, FULL, seed=11, reps=range(20000))
    ra = batch.a[:, 0] - 0.7 * math.cos(2 * math.pi * theta)
    rb = batch.b[:, 1]
    se = eps / math.sqrt(20000)
    assert abs(ra.mean()) < 4 * se
    assert abs(rb.mean()) < 4 * se
    assert np.var(ra, ddof=1) == pytest.approx(eps**2, rel=0.05)
    assert abs(np.corrcoef(batch.a[:, 1], batch.b[:, 1])[0, 1]) < 0.04


def test_same_stream_same_observation():
    f = make_signal([1.0, 0.2])
    o1 = simulate(f, 0.1, 0.2, 5, FULL, RandomStream(7, 3))
    o2 = simulate(f, 0.1, 0.2, 5, FULL, RandomStream(7, 3))
    o3 = simulate(f, 0.1, 0.2, 5, FULL, RandomStream(7, 4))
    np.testing.assert_array_equal(o1.a, o2.a)
    assert not np.array_equal(o1.a, o3.a)


def test_noise_prefix_stable_in_K():
    small = noise_block(5, [0, 1, 2], 4)
    large = noise_block(5, [0, 1, 2], 10)
    np.testing.assert_array_equal(small, large[:, :4])


def test_batch_rows_match_single_draws():
    f = make_signal([1.0, -0.3, 0.1])
    batch = simulate_batch(f.padded(6), 0.07, 0.1, FULL, seed=9, reps=[4, 0, 17])
    for i, r in enumerate([4, 0, 17]):
        obs = simulate(f, 0.07, 0.1, 6, FULL, RandomStream(9, r))
        np.testing.assert_array_equal(batch.row(i).a, obs.a)
        np.testing.assert_array_equal(batch.row(i).b, obs.b)


def test_batch_from_observation():
    obs = simulate(make_signal([1.0]), 0.1, 0.1, 2, FULL, RandomStream(0))
    b = ObservationBatch.from_observation(obs)
    assert b.R == 1 and b.K == 2 and b.theta_true[0] == 0.1

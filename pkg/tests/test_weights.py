import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shiftlab.errors import InvalidInputError, SingularVarianceError
from shiftlab.signal_model import SobolevBall, make_signal, sobolev_boundary_signal
from shiftlab.weights import (
    CORRECTED,
    PINSKER,
    AssumptionBParams,
    WeightSequence,
    bandwidth_asymptotic,
    bandwidth_equation,
    check_assumptions,
    corrected_weights,
    default_gamma,
    head_size,
    minimax_constant,
    minimax_value,
    pinsker_weights,
    prior_variances,
    projection_weights,
    risk_functional,
    saddle_signal,
    shrinkage_from_variances,
    solve_bandwidth,
    weights_for,
)

balls = st.builds(SobolevBall, st.floats(1.2, 4.0), st.floats(0.1, 5.0))


def test_weight_clipping_flags_and_warns(caplog):
    with caplog.at_level(logging.WARNING):
        w = WeightSequence([1.2, 0.5, -0.1])
    assert w.clipped
    np.testing.assert_array_equal(w.values, [1.0, 0.5, 0.0])
    assert "clipped" in caplog.text
    assert not WeightSequence([1.0, 0.5]).clipped


def test_weight_sequence_round_trip():
    w = corrected_weights(SobolevBall(), 10.3, 0.3, 12)
    assert WeightSequence.from_dict(w.to_dict()) == w
    assert w.K_h == 12 and w.support == 10
    lines = w.to_csv().strip().splitlines()
    assert lines[0].startswith("k,") and len(lines) == 13


def test_projection_weights():
    w = projection_weights(3, 5)
    np.testing.assert_array_equal(w.values, [1, 1, 1, 0, 0])
    with pytest.raises(InvalidInputError):
        projection_weights(0, 5)


def test_bandwidth_equation_by_hand():
    # beta = 2, W = 2.5: only k = 1, 2 contribute
    ball = SobolevBall(2, 1)
    expected = 0.01 * ((2.5 - 1) * (2 * math.pi) ** 4 + (1.25 - 1) * (4 * math.pi) ** 4)
    assert bandwidth_equation(ball, 0.1, 2.5) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("beta", [1.5, 2.0, 3.0])
@pytest.mark.parametrize("L", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("eps", [0.1, 0.01, 0.001])
def test_solver_residual(beta, L, eps):
    ball = SobolevBall(beta, L)
    sol = solve_bandwidth(ball, eps)
    assert abs(bandwidth_equation(ball, eps, sol.W) - L) <= 1e-9 * L
    assert sol.W > 1


def test_solver_matches_asymptotic_at_small_eps():
    ball = SobolevBall(2, 1)
    ratio = solve_bandwidth(ball, 1e-4).W / bandwidth_asymptotic(ball, 1e-4)
    assert 0.9 <= ratio <= 1.1


@given(balls, st.floats(1e-3, 0.3))
@settings(max_examples=40, deadline=None)
def test_bandwidth_monotone_in_eps(ball, eps):
    assert solve_bandwidth(ball, eps / 2).W >= solve_bandwidth(ball, eps).W


def test_pinsker_linear_for_beta_two():
    w = pinsker_weights(SobolevBall(2, 1), 4.0, 6)
    np.testing.assert_allclose(w.values, [0.75, 0.5, 0.25, 0, 0, 0])
    with pytest.raises(InvalidInputError):
        pinsker_weights(SobolevBall(2, 1), 4.5, 4)


def test_corrected_weights_head():
    ball = SobolevBall(2, 1)
    w = corrected_weights(ball, 10.0, 0.35, 10)
    assert head_size(0.35, 10.0) == 3
    np.testing.assert_allclose(w.values[:3], 1.0)
    np.testing.assert_allclose(w.values[3:], pinsker_weights(ball, 10.0, 10).values[3:])
    with pytest.raises(InvalidInputError):
        corrected_weights(ball, 10.0, 1.5, 10)


def test_default_gamma_domain():
    assert default_gamma(0.01) == pytest.approx(1 / math.log(1e4))
    with pytest.raises(InvalidInputError):
        default_gamma(0.7)


def test_weights_for_kinds():
    ball = SobolevBall()
    assert weights_for(PINSKER, ball, 0.01).kind == PINSKER
    w = weights_for(CORRECTED, ball, 1e-5, K=50)
    assert w.K_h == 50 and w.values[0] == 1.0


def test_risk_functional_by_hand():
    f = make_signal([1.0, 0.5])
    h = WeightSequence([0.5, 0.0])
    eps = 0.1
    w1, w2 = (2 * math.pi) ** 2, (4 * math.pi) ** 2
    expected = w1 * (0.25 * 1.0 + eps**2 * 0.25) + w2 * (1.0 * 0.25)
    assert risk_functional(f, h, eps) == pytest.approx(expected, rel=1e-14)
    # h = 1 leaves only the variance term
    assert risk_functional(f, WeightSequence([1, 1]), eps) == pytest.approx(eps**2 * (w1 + w2))


def test_saddle_variances_invert_shrinkage():
    q = pinsker_weights(SobolevBall(), 7.3, 8)
    s2 = prior_variances(q, 0.01, "saddle")
    np.testing.assert_allclose(shrinkage_from_variances(s2, 0.01), q.values, atol=1e-15)
    with pytest.raises(SingularVarianceError):
        prior_variances(WeightSequence([1.0, 0.5]), 0.01, "saddle")


def test_truncated_variances():
    ball = SobolevBall()
    W, gamma = 10.0, 0.35
    lam = corrected_weights(ball, W, gamma, 10)
    s2 = prior_variances(lam, 0.01, "truncated", gamma=gamma, W=W)
    q = pinsker_weights(ball, W, 10)
    np.testing.assert_array_equal(s2[:3], 0.0)
    np.testing.assert_allclose(s2[3:], (1 - gamma) * 1e-4 * q.values[3:] / (1 - q.values[3:]))


@given(balls, st.floats(1e-4, 0.1))
@settings(max_examples=40, deadline=None)
def test_saddle_point_identity(ball, eps):
    r_exact = minimax_value(ball, eps)[0]
    s = saddle_signal(ball, eps)
    W = solve_bandwidth(ball, eps).W
    q = pinsker_weights(ball, W, s.K_f)
    assert risk_functional(s, q, eps) == pytest.approx(r_exact, rel=1e-10)
    assert ball.energy(s.coeffs) == pytest.approx(ball.L, rel=1e-8)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_saddle_inequalities(seed):
    ball, eps = SobolevBall(2, 1), 0.005
    rng = np.random.default_rng(seed)
    r = minimax_value(ball, eps)[0]
    W = solve_bandwidth(ball, eps).W
    K = 3 * math.ceil(W)
    q = pinsker_weights(ball, W, K)
    f = rng.standard_normal(K)
    f *= math.sqrt(ball.L / ball.energy(f))
    assert risk_functional(f, q, eps) <= r * (1 + 1e-9)
    s = saddle_signal(ball, eps)
    assert risk_functional(s, rng.random(K), eps) >= r * (1 - 1e-9)


def test_minimax_constant_matches_bandwidth_form():
    # r_asym = (2 pi)^2 (beta - 1) / (3 (beta + 2)) eps^2 W_asym^3
    for beta, L in ((2, 1), (3, 2), (1.5, 0.5)):
        ball = SobolevBall(beta, L)
        eps = 1e-3
        W = bandwidth_asymptotic(ball, eps)
        alt = (2 * math.pi) ** 2 * (beta - 1) / (3 * (beta + 2)) * eps**2 * W**3
        assert minimax_value(ball, eps)[1] == pytest.approx(alt, rel=1e-12)
        assert minimax_constant(ball) > 0


def test_minimax_value_converges():
    ball = SobolevBall(2, 1)
    ratios = [minimax_value(ball, e)[0] / minimax_value(ball, e)[1] for e in (1e-3, 1e-5, 1e-7)]
    assert abs(ratios[-1] - 1) < abs(ratios[0] - 1)
    assert abs(ratios[-1] - 1) < 0.05


def test_assumption_report():
    ball = SobolevBall()
    f = sobolev_boundary_signal(ball, 32)
    eps = 1e-6
    W = solve_bandwidth(ball, eps).W
    lam = corrected_weights(ball, W, default_gamma(eps), math.ceil(W))
    rep = check_assumptions(lam, eps, AssumptionBParams(rho1=0.005), f)
    assert rep.b0 and rep.b2 and rep.b1
    assert rep.assumption_b
    # at desk-scale eps the head is empty, so h_1 < 1
    W = solve_bandwidth(ball, 0.05).W
    lam = corrected_weights(ball, W, default_gamma(0.05), 2)
    assert not check_assumptions(lam, 0.05, AssumptionBParams(), f).b0

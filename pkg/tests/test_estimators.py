import math

import numpy as np
import pytest
from scipy.stats import norm as gauss

from smallball.errors import ConfigurationError, DomainError, LadderError, PowerWarning
from smallball.estimators import (
    ProbEstimate,
    SBFCurve,
    _default_start,
    ball_prob_mc,
    ball_prob_splitting,
    make_ladder,
    pilot_curve,
    richardson_extrapolate,
    sbf_analytic,
    sbf_curve,
    shifted_ball_prob_cm,
)
from smallball.models import BrownianBridge, Scalar, WienerPath
from smallball.norms import NormSpec
from smallball.streams import RandomStream
from smallball.transfer import band_log_prob

SUP = NormSpec("sup")

# closed-form anchors, frozen after independent evaluation of the formulas
PHI_SCALAR_1 = 0.38171514630212616        # -log(2 Phi(1) - 1)
PHI_SCALAR_005 = 3.2219402234264516       # -log(2 Phi(0.05) - 1)
PHI_WIENER_05 = 4.693237725274188         # theta series at eps = 0.5
PHI_WIENER_03 = 13.466219415131397        # theta series at eps = 0.3
PHI_DISC_256_05 = 4.052499530615389       # 256-step walk, eps = 0.5, band sweep


# -- analytic oracles -----------------------------------------------------------


def test_scalar_analytic_matches_gaussian_cdf():
    est = sbf_analytic(Scalar(), SUP, 1.0)
    assert est.method == "analytic" and est.stderr_log == 0.0
    assert est.phi == pytest.approx(PHI_SCALAR_1, rel=1e-12)
    assert est.phi == pytest.approx(-math.log(2.0 * gauss.cdf(1.0) - 1.0), rel=1e-12)
    assert sbf_analytic(Scalar(), SUP, 0.05).phi == pytest.approx(PHI_SCALAR_005, rel=1e-12)


def test_scalar_analytic_large_radius_stays_accurate():
    # the log1p form keeps precision where 2 Phi(eps) - 1 rounds to 1
    est = sbf_analytic(Scalar(), SUP, 8.0)
    assert 0.0 < est.phi < 1e-14
    assert est.phi == pytest.approx(2.0 * gauss.sf(8.0), rel=1e-6)


def test_scalar_analytic_respects_sigma():
    assert sbf_analytic(Scalar(sigma=2.0), SUP, 2.0).phi == pytest.approx(
        PHI_SCALAR_1, rel=1e-12
    )


def test_wiener_sup_theta_series_frozen_values():
    model = WienerPath(n_steps=256)
    assert sbf_analytic(model, SUP, 0.5).phi == pytest.approx(PHI_WIENER_05, rel=1e-12)
    assert sbf_analytic(model, SUP, 0.3).phi == pytest.approx(PHI_WIENER_03, rel=1e-12)


def test_wiener_theta_series_continuous_across_regime_switch():
    # small-radius and reflection branches meet at eps = 0.7
    model = WienerPath(n_steps=16)
    lo = sbf_analytic(model, SUP, 0.7 - 1e-9).phi
    hi = sbf_analytic(model, SUP, 0.7 + 1e-9).phi
    assert lo == pytest.approx(hi, abs=1e-7)


def test_wiener_theta_series_brownian_scaling():
    # sup over [0, T] at radius eps has the law of sqrt(T) sup over [0, 1]
    long = sbf_analytic(WienerPath(n_steps=64, horizon=4.0), NormSpec("sup", interval=(0.0, 4.0)), 1.0)
    unit = sbf_analytic(WienerPath(n_steps=64), SUP, 0.5)
    assert long.phi == pytest.approx(unit.phi, rel=1e-12)


def test_bridge_series_continuous_across_regime_switch():
    model = BrownianBridge(n_steps=16)
    lo = sbf_analytic(model, SUP, 0.5 - 1e-9).phi
    hi = sbf_analytic(model, SUP, 0.5 + 1e-9).phi
    assert lo == pytest.approx(hi, abs=1e-7)


def test_analytic_returns_none_off_catalog():
    assert sbf_analytic(WienerPath(n_steps=16, d=2), SUP, 0.5) is None
    assert sbf_analytic(WienerPath(n_steps=16), NormSpec("lp", p=2.0), 0.5) is None
    assert sbf_analytic(WienerPath(n_steps=16), NormSpec("sup", interval=(0.0, 0.5)), 0.5) is None
    with pytest.raises(DomainError):
        sbf_analytic(Scalar(), SUP, 0.0)


# -- estimate containers ---------------------------------------------------------


def test_prob_estimate_contract():
    with pytest.raises(ConfigurationError):
        ProbEstimate(0.1, 0.0, 0, "analytic")          # positive log prob
    with pytest.raises(ConfigurationError):
        ProbEstimate(-1.0, 0.1, 10, "analytic")        # analytic must have stderr 0
    with pytest.raises(ConfigurationError):
        ProbEstimate(-1.0, 0.0, 10, "mc")              # mc must not have stderr 0
    with pytest.raises(ConfigurationError):
        ProbEstimate(-1.0, 0.1, 10, "bayes")           # unknown method tag
    est = ProbEstimate(-2.0, 0.1, 100, "mc")
    assert est.phi == 2.0


def test_sbf_curve_contract():
    ests = (ProbEstimate(-1.0, 0.0, 0, "analytic"), ProbEstimate(-2.0, 0.0, 0, "analytic"))
    curve = SBFCurve((1.0, 0.5), ests)
    assert np.allclose(curve.phi, [1.0, 2.0])
    assert curve.monotone_violations() == 0
    with pytest.raises(ConfigurationError):
        SBFCurve((0.5, 1.0), ests)
    with pytest.raises(ConfigurationError):
        SBFCurve((1.0, 0.5, 0.25), ests)
    dropping = SBFCurve((1.0, 0.5), (ProbEstimate(-2.0, 0.0, 0, "analytic"),
                                     ProbEstimate(-1.0, 0.0, 0, "analytic")))
    assert dropping.monotone_violations() == 1


# -- plain Monte Carlo ------------------------------------------------------------


def test_mc_matches_scalar_oracle():
    est = ball_prob_mc(Scalar(), SUP, 1.0, 200_000, RandomStream(21))
    assert abs(est.phi - PHI_SCALAR_1) < 3.0 * est.stderr_log


def test_mc_matches_discrete_band_sweep():
    # the walk's own ball mass, measured two independent ways
    model = WienerPath(n_steps=64)
    est = ball_prob_mc(model, SUP, 0.8, 100_000, RandomStream(22))
    exact = -band_log_prob(np.full(65, -0.8), np.full(65, 0.8), model.dt, start=0.0)
    assert abs(est.phi - exact) < 3.0 * est.stderr_log


def test_mc_low_hit_count_warns():
    with pytest.warns(PowerWarning):
        est = ball_prob_mc(Scalar(), SUP, 6.5e-4, 20_000, RandomStream(23))
    assert math.isfinite(est.phi)


def test_mc_zero_hits_yields_rule_of_three_bound():
    est = ball_prob_mc(Scalar(), SUP, 1e-9, 1_000, RandomStream(24))
    assert est.bound
    assert est.log_prob == pytest.approx(math.log(3.0 / 1_000))
    assert est.stderr_log == math.inf


def test_mc_validation():
    with pytest.raises(DomainError):
        ball_prob_mc(Scalar(), SUP, -1.0, 100, RandomStream(0))
    with pytest.raises(ConfigurationError):
        ball_prob_mc(Scalar(), SUP, 1.0, 0, RandomStream(0))


def test_cm_reweighted_matches_shifted_oracle():
    # scalar shifted ball has the exact mass Phi(h+eps) - Phi(h-eps)
    est = shifted_ball_prob_cm(Scalar(), SUP, 1.0, 0.5, 100_000, RandomStream(25))
    exact = math.log(gauss.cdf(1.5) - gauss.cdf(0.5))
    assert abs(est.log_prob - exact) < 3.0 * est.stderr_log
    assert est.method == "cm_reweighted"


def test_cm_reweighted_agrees_with_direct_mc_on_paths():
    model = WienerPath(n_steps=32)
    h = 0.6 * model.grid()
    direct = ball_prob_mc(model, SUP, 0.7, 100_000, RandomStream(26), center=h)
    cm = shifted_ball_prob_cm(model, SUP, h, 0.7, 100_000, RandomStream(27))
    assert abs(direct.log_prob - cm.log_prob) < 3.0 * math.hypot(
        direct.stderr_log, cm.stderr_log
    )


# -- ladders and splitting ---------------------------------------------------------


def exact_scalar_pilot(eps):
    return -sbf_analytic(Scalar(), SUP, eps).log_prob


def test_make_ladder_spacing_and_anchors():
    levels = make_ladder(exact_scalar_pilot, 2.0, (0.5, 0.05), delta_phi=1.1)
    assert levels[0] == 2.0
    assert 0.5 in levels and levels[-1] == 0.05
    assert all(b < a for a, b in zip(levels, levels[1:]))
    costs = [exact_scalar_pilot(e) for e in levels]
    assert all(c2 - c1 <= 1.1 + 0.05 for c1, c2 in zip(costs, costs[1:]))


def test_make_ladder_validation():
    with pytest.raises(ConfigurationError):
        make_ladder(exact_scalar_pilot, 0.4, (0.5,))
    with pytest.raises(ConfigurationError):
        make_ladder(exact_scalar_pilot, 1.0, ())
    with pytest.raises(ConfigurationError):
        make_ladder(lambda e: e, 1.0, (0.5,))  # pilot decreasing in cost


def test_splitting_matches_scalar_oracle():
    levels = make_ladder(exact_scalar_pilot, 1.5, (0.05,))
    est, diag = ball_prob_splitting(
        Scalar(), SUP, 0.05, levels, 512, RandomStream(30), n_replicas=3
    )
    assert abs(est.phi - PHI_SCALAR_005) < 3.0 * est.stderr_log
    assert est.method == "splitting"
    assert diag.levels == tuple(levels)
    assert all(0.0 < f <= 1.0 for f in diag.cond_fractions)


def test_splitting_matches_discrete_band_sweep():
    # splitting prices the walk's measure; the deterministic sweep is its oracle
    model = WienerPath(n_steps=256)
    pilot = pilot_curve(model, SUP, RandomStream(31).spawn(10_001))
    levels = make_ladder(pilot, 1.8, (0.5,))
    est, _ = ball_prob_splitting(model, SUP, 0.5, levels, 512, RandomStream(31), n_replicas=3)
    assert abs(est.phi - PHI_DISC_256_05) < 3.0 * est.stderr_log


def test_splitting_validation():
    with pytest.raises(ConfigurationError):
        ball_prob_splitting(Scalar(), SUP, 0.5, [1.0, 0.4], 64, RandomStream(0))
    with pytest.raises(ConfigurationError):
        ball_prob_splitting(Scalar(), SUP, 0.5, [0.4, 0.5], 64, RandomStream(0))
    with pytest.raises(ConfigurationError):
        ball_prob_splitting(Scalar(), SUP, 0.5, [1.0, 0.5], 64, RandomStream(0), rho=1.5)
    with pytest.raises(ConfigurationError):
        ball_prob_splitting(Scalar(), SUP, 0.5, [1.0, 0.5], 64, RandomStream(0), n_replicas=0)


def test_splitting_dies_loudly_on_hopeless_levels():
    with pytest.raises(LadderError):
        ball_prob_splitting(Scalar(), SUP, 1e-9, [1.0, 1e-9], 64, RandomStream(32))


def test_sbf_curve_records_all_anchors():
    curve, diag = sbf_curve(Scalar(), SUP, (1.0, 0.5), RandomStream(33), n_per_level=512)
    for eps, expected in ((1.0, PHI_SCALAR_1), (0.5, exact_scalar_pilot(0.5))):
        j = curve.eps_grid.index(eps)
        est = curve.estimates[j]
        assert abs(est.phi - expected) < 3.0 * est.stderr_log
    assert set(curve.eps_grid) <= set(diag.levels)
    assert curve.monotone_violations() == 0


def test_pilot_curve_uses_exact_form_when_available():
    pilot = pilot_curve(Scalar(), SUP, RandomStream(34))
    assert pilot(0.5) == pytest.approx(exact_scalar_pilot(0.5), rel=1e-12)


def test_pilot_curve_mc_fallback_is_monotone():
    pilot = pilot_curve(WienerPath(n_steps=64), NormSpec("lp", p=2.0), RandomStream(35))
    assert pilot(0.1) > pilot(0.2) > pilot(0.4) > 0.0


def test_default_start_is_shallow():
    pilot = pilot_curve(Scalar(), SUP, RandomStream(36))
    start = _default_start(pilot, 0.5)
    assert start > 0.5
    assert pilot(start) <= 0.7


# -- grid-bias extrapolation --------------------------------------------------------


def test_richardson_recovers_synthetic_limit_exactly():
    ns = np.array([256.0, 1024.0, 4096.0])
    values = 7.0 - 3.0 * ns ** -0.5
    fit = richardson_extrapolate(values, np.ones(3), ns, rate=0.5)
    assert fit.value == pytest.approx(7.0, abs=1e-9)
    assert fit.coef == pytest.approx(3.0, abs=1e-9)
    assert fit.residual < 1e-9


def test_richardson_needs_two_resolutions():
    with pytest.raises(ConfigurationError):
        richardson_extrapolate(np.array([1.0]), np.array([0.1]), np.array([64.0]))

import math

import numpy as np
import pytest
from scipy.stats import norm as gauss

from smallball.errors import ConfigurationError, DomainError
from smallball.estimators import sbf_analytic
from smallball.models import WienerPath
from smallball.norms import NormSpec
from smallball.streams import RandomStream
from smallball.transfer import (
    band_log_prob,
    band_log_prob_extrapolated,
    band_log_profile,
    refine_nodes,
)

SUP = NormSpec("sup")
PHI_DISC_256_05 = 4.052499530615389
PHI_DISC_256_04 = 6.243980144567865


def centered_band(eps, n):
    return np.full(n + 1, -eps), np.full(n + 1, eps)


def test_single_step_band_matches_gaussian_cdf():
    # two nodes: the sweep reduces to one Gaussian increment integral
    lo, hi = centered_band(0.05, 1)
    got = band_log_prob(lo, hi, dt=1.0, start=0.0, dx=0.002)
    exact = math.log(2.0 * gauss.cdf(0.05) - 1.0)
    assert got == pytest.approx(exact, abs=1e-4)


def test_narrow_band_survives_wide_step_kernel():
    # the step kernel is far longer than the spatial grid here; the sweep
    # must keep the grid's length through the convolutions
    lo, hi = centered_band(0.05, 3)
    got = band_log_prob(lo, hi, dt=1.0, start=0.0, dx=0.002)
    assert math.isfinite(got)
    step = 2.0 * gauss.cdf(0.05) - 1.0
    # three steps, band much narrower than the step scale: the position
    # forgets itself, so consecutive stays are nearly independent
    assert got == pytest.approx(3.0 * math.log(step), abs=0.01)


def test_discrete_sup_ball_frozen_values():
    lo, hi = centered_band(0.5, 256)
    assert -band_log_prob(lo, hi, 1.0 / 256, start=0.0) == pytest.approx(
        PHI_DISC_256_05, rel=1e-9
    )
    lo, hi = centered_band(0.4, 256)
    assert -band_log_prob(lo, hi, 1.0 / 256, start=0.0) == pytest.approx(
        PHI_DISC_256_04, rel=1e-9
    )


def test_discrete_ball_agrees_with_mc():
    # dual route: hit counting against the deterministic sweep
    from smallball.estimators import ball_prob_mc

    model = WienerPath(n_steps=32)
    est = ball_prob_mc(model, SUP, 0.6, 150_000, RandomStream(40))
    lo, hi = centered_band(0.6, 32)
    exact = band_log_prob(lo, hi, model.dt, start=0.0)
    assert abs(est.log_prob - exact) < 3.0 * est.stderr_log


def test_profile_symmetry():
    lo, hi = centered_band(0.5, 64)
    x, logv = band_log_profile(lo, hi, 1.0 / 64)
    finite = np.isfinite(logv)
    assert np.allclose(logv[finite], logv[finite][::-1], atol=1e-9)
    k = int(np.argmax(logv))
    assert abs(x[k]) < 0.02  # the best start of a centered band is the center


def test_profile_translation_invariance():
    # shifting band and start by whole cells relabels the grid, nothing else
    rng = RandomStream(41).generator()
    w = np.cumsum(rng.standard_normal(65)) * math.sqrt(1.0 / 64)
    w[0] = 0.0
    dt = 1.0 / 64
    dx = math.sqrt(dt) / 8.0
    c = 3.0 * dx
    base = band_log_prob(w - 0.5, w + 0.5, dt, start=0.0, dx=dx)
    moved = band_log_prob(w - 0.5 + c, w + 0.5 + c, dt, start=c, dx=dx)
    assert moved == pytest.approx(base, abs=1e-9)


def test_start_handling():
    lo, hi = centered_band(0.5, 64)
    inside = band_log_prob(lo, hi, 1.0 / 64, start=0.3)
    assert math.isfinite(inside)
    assert band_log_prob(lo, hi, 1.0 / 64, start=2.0) == -math.inf
    free = band_log_prob(lo, hi, 1.0 / 64, start=None)
    assert free >= inside


def test_impossible_band_returns_neg_inf():
    lo = np.array([-1.0, 5.0, -1.0])
    hi = lo + 0.01
    assert band_log_prob(lo, hi, 1e-4, start=None) == -math.inf


def test_refine_nodes():
    vals = np.array([0.0, 1.0, 3.0])
    assert np.allclose(refine_nodes(vals, 1), vals)
    fine = refine_nodes(vals, 2)
    assert np.allclose(fine, [0.0, 0.5, 1.0, 2.0, 3.0])
    assert len(refine_nodes(vals, 4)) == 9
    with pytest.raises(ConfigurationError):
        refine_nodes(vals, 0)


def test_extrapolation_cancels_monitoring_bias():
    model = WienerPath(n_steps=256)
    theta = sbf_analytic(model, SUP, 0.5).phi
    lo, hi = centered_band(0.5, 256)
    coarse = -band_log_prob(lo, hi, model.dt, start=0.0)
    extrap = -band_log_prob_extrapolated(lo, hi, model.dt, start=0.0, refine=4)
    assert abs(extrap - theta) < 0.06
    assert abs(extrap - theta) < 0.2 * abs(coarse - theta)
    with pytest.raises(ConfigurationError):
        band_log_prob_extrapolated(lo, hi, model.dt, refine=1)


def test_band_validation():
    with pytest.raises(ConfigurationError):
        band_log_profile(np.zeros(3), np.ones(4), 0.1)
    with pytest.raises(ConfigurationError):
        band_log_profile(np.zeros(1), np.ones(1), 0.1)
    with pytest.raises(DomainError):
        band_log_profile(np.ones(3), np.zeros(3), 0.1)
    with pytest.raises(DomainError):
        band_log_profile(np.zeros(3), np.ones(3), 0.0)
    with pytest.raises(ConfigurationError):
        band_log_profile(np.zeros(3), np.ones(3), 0.1, dx=-1.0)

import math

import numpy as np
import pytest
from scipy import integrate
from scipy.stats import norm as gauss

from smallball.errors import ConfigurationError, DataError, DomainError, RangeError
from smallball.estimators import ProbEstimate, SBFCurve
from smallball.models import Scalar, WienerPath
from smallball.norms import NormSpec
from smallball.quantization import (
    REFRESH_EVERY,
    Codebook,
    QuantizationResult,
    build_codebook,
    coverage_event_rate,
    distortion,
    invert_gauge,
    nearest_distance,
    sample_nearest,
    target_size,
    verify_distortion_gauge_match,
    verify_distortion_upper_bound,
)
from smallball.rsbf import GaugeCurve, VerifierConfig
from smallball.streams import RandomStream

SUP = NormSpec("sup")
R_TWO_WORDS = 0.8  # floor(e^0.8) = 2


def test_target_size_values():
    assert target_size(0.0) == 1
    assert target_size(1.0) == 2
    assert target_size(2.0) == 7
    assert target_size(4.0) == 54
    with pytest.raises(ConfigurationError):
        target_size(-1.0)


def test_build_codebook_count_and_budget():
    book = build_codebook(Scalar(), 2.0, RandomStream(80))
    assert book.n == 7
    assert book.entries.shape == (7,)
    # 162754 paths x 4097 nodes x 8 bytes ~ 5 GiB: must refuse, not allocate
    with pytest.raises(ConfigurationError, match="budget"):
        build_codebook(WienerPath(n_steps=4096), 12.0, RandomStream(80))


def test_codebook_rejects_wrong_count():
    with pytest.raises(ConfigurationError):
        Codebook(np.zeros(3), 2.0, RandomStream(0))


def test_nearest_distance_tiny_exact():
    book = Codebook(np.array([-1.0, 3.0]), R_TWO_WORDS, RandomStream(0))
    got = nearest_distance(np.array([0.0, 2.9]), book, 0.0, SUP)
    assert got == pytest.approx([1.0, 0.1], abs=1e-6)


def test_nearest_distance_chunking_is_exact():
    model = WienerPath(n_steps=32)
    book = build_codebook(model, 3.0, RandomStream(81))
    test = model.sample_values(RandomStream(82).generator(), 40)
    base = nearest_distance(test, book, model.dt, SUP)
    assert np.array_equal(nearest_distance(test, book, model.dt, SUP, chunk=1), base)
    assert np.array_equal(nearest_distance(test, book, model.dt, SUP, chunk=7), base)


def test_sample_nearest_first_batch_reproducible():
    model = Scalar()
    zs = sample_nearest(model, SUP, R_TWO_WORDS, 100, RandomStream(83))
    again = sample_nearest(model, SUP, R_TWO_WORDS, 100, RandomStream(83))
    assert np.array_equal(zs, again)
    # first refresh batch, rebuilt by hand from the documented stream layout
    stream = RandomStream(83)
    book = build_codebook(model, R_TWO_WORDS, stream.spawn(1).spawn(0))
    test = model.sample_values(stream.spawn(0).generator(), REFRESH_EVERY)
    manual = nearest_distance(test, book, model.dt, SUP)
    assert np.array_equal(zs[:REFRESH_EVERY], manual)
    # later batches use fresh codebooks, so the law cannot be batch-periodic
    assert not np.array_equal(zs[:36], zs[64:100])


def test_distortion_anchor_two_moment():
    # one codeword: Z = |X - C| with X, C iid, so E Z^2 = 2 exactly
    model = Scalar()
    book = build_codebook(model, 0.0, RandomStream(84))
    res = distortion(model, SUP, book, 2.0, 4000, RandomStream(84))
    assert abs(res.d_hat - math.sqrt(2.0)) < 3.0 * res.stderr
    assert res.stderr < 0.12
    assert len(res.z_quantiles) == 5
    assert all(a <= b for a, b in zip(res.z_quantiles, res.z_quantiles[1:]))


def test_distortion_anchor_one_moment():
    model = Scalar()
    book = build_codebook(model, 0.0, RandomStream(85))
    res = distortion(model, SUP, book, 1.0, 4000, RandomStream(85))
    assert abs(res.d_hat - 2.0 / math.sqrt(math.pi)) < 3.0 * res.stderr


def test_distortion_validation():
    model = Scalar()
    book = build_codebook(model, 0.0, RandomStream(86))
    with pytest.raises(DomainError):
        distortion(model, SUP, book, 0.0, 500, RandomStream(86))
    with pytest.raises(ConfigurationError):
        distortion(model, SUP, book, 2.0, 99, RandomStream(86))


def min_moment_oracle(n_words: int, s: float) -> float:
    """(E min_i |X - C_i|^s)^(1/s) by survival-function quadrature.

    Inner integral in t, outer Gauss-Hermite in the test point; the i.i.d.
    codewords make the survival factor a plain power.
    """
    nodes, weights = np.polynomial.hermite_e.hermegauss(80)

    def survival(t, x):
        return 2.0 - gauss.cdf(t - x) - gauss.cdf(t + x)

    total = 0.0
    for x, w in zip(nodes, weights):
        val, err = integrate.quad(
            lambda t: s * t ** (s - 1.0) * survival(t, x) ** n_words,
            0.0, abs(x) + 14.0, limit=200,
        )
        assert err < 1e-5  # the reported estimate is conservative
        total += w * val
    return (total / math.sqrt(2.0 * math.pi)) ** (1.0 / s)


def test_min_moment_oracle_self_check():
    # with a single codeword the second moment is E|X - C|^2 = 2, exactly
    assert min_moment_oracle(1, 2.0) == pytest.approx(math.sqrt(2.0), abs=1e-8)


def test_distortion_two_words_matches_oracle():
    model = Scalar()
    book = build_codebook(model, R_TWO_WORDS, RandomStream(87))
    res = distortion(model, SUP, book, 2.0, 2000, RandomStream(87))
    assert abs(res.d_hat - min_moment_oracle(2, 2.0)) < 3.0 * res.stderr


def test_coverage_rate_matches_manual_count():
    model = Scalar()
    g = 1.1
    cov = coverage_event_rate(model, SUP, lambda r: g, 0.0, 0.5, 600, RandomStream(88))
    zs = sample_nearest(model, SUP, 0.0, 600, RandomStream(88))
    want = float(np.mean((zs >= 0.5 * g) & (zs <= 1.5 * g)))
    assert cov.rate == want
    assert 0.0 < cov.rate < 1.0
    assert cov.stderr > 0.0


def test_coverage_rate_kappa_validation():
    for kappa in (0.0, 1.0, 1.5, -0.2):
        with pytest.raises(ConfigurationError):
            coverage_event_rate(Scalar(), SUP, lambda r: 1.0, 0.0, kappa, 200,
                                RandomStream(0))


# -- gauge inversion ----------------------------------------------------------


def power_curve(c=1.0, grid=(1.0, 0.5, 0.25)):
    # depth c / eps^2 is a straight line in log-log, so interpolation is exact
    ests = tuple(ProbEstimate(-c / e**2, 0.01, 1000, "mc") for e in grid)
    return SBFCurve(tuple(grid), ests, "synthetic", "sup")


def test_invert_gauge_knot_round_trip():
    curve = power_curve()
    inv = invert_gauge(curve)
    for e in curve.eps_grid:
        assert inv(1.0 / e**2) == pytest.approx(e, rel=1e-12)
    assert inv.r_range == (1.0, 16.0)


def test_invert_gauge_interior_exact_for_power_law():
    inv = invert_gauge(power_curve(c=2.0))
    for e in (0.8, 0.62, 0.3):
        assert inv(2.0 / e**2) == pytest.approx(e, rel=1e-12)
    arr = inv(np.array([2.0, 8.0]))
    assert arr == pytest.approx([1.0, 0.5], rel=1e-12)


def test_invert_gauge_range_and_flat_errors():
    inv = invert_gauge(power_curve())
    with pytest.raises(RangeError):
        inv(0.5)
    with pytest.raises(RangeError):
        inv(17.0)
    flat = SBFCurve((1.0, 0.5), (ProbEstimate(-2.0, 0.0, 0, "analytic"),) * 2, "x", "sup")
    with pytest.raises(DataError):
        invert_gauge(flat)
    with pytest.raises(ConfigurationError):
        invert_gauge(SBFCurve((1.0,), (ProbEstimate(-2.0, 0.0, 0, "analytic"),), "x", "sup"))


def gauge_curve_fixture():
    grid = (1.0, 0.5, 0.25)
    med = tuple(1.0 / e**2 for e in grid)
    mean = tuple(1.1 / e**2 for e in grid)
    return GaugeCurve(
        eps_grid=grid, n_centers=200, median=med, mean=mean,
        mean_se=(0.05, 0.1, 0.3), median_ci=tuple((m * 0.9, m * 1.1) for m in med),
        iqr=(0.5, 1.5, 5.0), stddev=(0.6, 1.8, 6.0),
        rel_iqr=(0.5, 0.375, 0.3125),
    )


def test_invert_gauge_mean_and_median_routes():
    g = gauge_curve_fixture()
    inv_mean = invert_gauge(g, which="mean")
    inv_med = invert_gauge(g, which="median")
    assert inv_mean(1.1) == pytest.approx(1.0, rel=1e-12)
    assert inv_med(4.0) == pytest.approx(0.5, rel=1e-12)
    with pytest.raises(ConfigurationError):
        invert_gauge(g, which="mode")


def test_invert_gauge_isotonic_projection_smooths_noise():
    # a tiny local inversion pools into one knot instead of failing the run
    grid = (1.0, 0.9, 0.5)
    ests = (
        ProbEstimate(-1.0, 0.05, 1000, "mc"),
        ProbEstimate(-0.98, 0.05, 1000, "mc"),
        ProbEstimate(-4.0, 0.05, 1000, "mc"),
    )
    inv = invert_gauge(SBFCurve(grid, ests, "x", "sup"))
    lo, hi = inv.r_range
    assert lo == pytest.approx(0.99)  # equal weights pool to the plain mean
    assert inv(lo) == pytest.approx(math.sqrt(0.9), rel=1e-12)
    assert inv(hi) == pytest.approx(0.5, rel=1e-12)


# -- verifier reports ---------------------------------------------------------


def qres(r, d_hat, stderr=0.01):
    return QuantizationResult(r, 2.0, d_hat, stderr, 1000, (0.0,) * 5)


def test_gauge_match_accepts_drift_toward_one():
    results = [qres(4.0, 1.5), qres(8.0, 1.2), qres(12.0, 1.05)]
    report = verify_distortion_gauge_match(results, lambda r: 1.0)
    assert report.passed
    ratios = [row.observed for row in report.rows_for("distortion-gauge-ratio")]
    assert ratios == pytest.approx([1.5, 1.2, 1.05])


def test_gauge_match_rejects_divergence():
    results = [qres(4.0, 1.5), qres(8.0, 1.9), qres(12.0, 2.5)]
    report = verify_distortion_gauge_match(results, lambda r: 1.0)
    assert not report.passed


def test_gauge_match_without_hypothesis_is_informational():
    results = [qres(4.0, 1.5), qres(8.0, 1.9), qres(12.0, 2.5)]
    report = verify_distortion_gauge_match(results, lambda r: 1.0, hypothesis_ok=False)
    assert report.passed  # None verdicts do not fail the report
    assert report.rows_for("distortion-gauge-match")[0].passed is None
    with pytest.raises(ConfigurationError):
        verify_distortion_gauge_match([], lambda r: 1.0)


def test_distortion_upper_bound_rows():
    results = [qres(4.0, 1.5), qres(8.0, 5.0)]
    report = verify_distortion_upper_bound(results, lambda r: 1.0)
    rows = report.rows_for("distortion-upper")
    assert rows[0].passed is True  # 1.5 <= 2.2
    assert rows[1].passed is False  # 5.0 > 2.2
    assert not report.passed
    soft = verify_distortion_upper_bound(results, lambda r: 1.0, hypothesis_ok=False)
    assert all(row.passed is None for row in soft.rows)
    with pytest.raises(ConfigurationError):
        verify_distortion_upper_bound([], lambda r: 1.0)


def test_distortion_upper_bound_uses_half_rate():
    # cap = (1 + slack) * 2 * inv(r/2): detectable with a rate-dependent inverse
    report = verify_distortion_upper_bound(
        [qres(8.0, 1.0)], lambda r: r, VerifierConfig(slack=0.25)
    )
    assert report.rows[0].threshold == pytest.approx(1.25 * 2.0 * 4.0)

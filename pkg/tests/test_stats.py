"""Student-t numerics and the outlier decision rule.

Two independent oracles: scipy.stats for pointwise values, and numeric
quadrature of our own density for the CDF (the same cross-check the
acceptance suite runs at full resolution).
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy import stats as sps

from imgorigin.exceptions import DegenerateDistributionError
from imgorigin.stats import (
    BelongingDistribution,
    grubbs_decide,
    grubbs_threshold,
    regularized_incomplete_beta,
    t_cdf,
    t_pdf,
    t_quantile,
)


def make_dist(mu=1.0, sigma=0.5, n=100, alpha=0.05, **kw):
    defaults = dict(
        model_id="m", reference_id="r", metric="mse",
        n=n, mu=mu, sigma=sigma, alpha=alpha, inversion_config_hash="0" * 12,
    )
    defaults.update(kw)
    return BelongingDistribution(**defaults)


class TestIncompleteBeta:
    @pytest.mark.parametrize(
        "x,a,b",
        [(0.5, 0.5, 0.5), (0.1, 2.0, 3.0), (0.99, 49.0, 0.5), (0.3, 1.0, 1.0)],
    )
    def test_against_scipy(self, x, a, b):
        assert regularized_incomplete_beta(x, a, b) == pytest.approx(
            sps.beta.cdf(x, a, b), abs=1e-13
        )

    def test_bounds(self):
        assert regularized_incomplete_beta(0.0, 2.0, 3.0) == 0.0
        assert regularized_incomplete_beta(1.0, 2.0, 3.0) == 1.0

    def test_uniform_case_is_identity(self):
        for x in (0.1, 0.25, 0.7, 0.93):
            assert regularized_incomplete_beta(x, 1.0, 1.0) == pytest.approx(x, abs=1e-12)

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            regularized_incomplete_beta(-0.1, 1.0, 1.0)
        with pytest.raises(ValueError):
            regularized_incomplete_beta(0.5, -1.0, 1.0)


class TestStudentT:
    @pytest.mark.parametrize("nu", [1, 2, 5, 10, 98])
    def test_pdf_cdf_against_scipy(self, nu):
        for t in np.linspace(-10, 10, 41):
            assert t_pdf(t, nu) == pytest.approx(sps.t.pdf(t, nu), abs=1e-13)
            assert t_cdf(t, nu) == pytest.approx(sps.t.cdf(t, nu), abs=1e-13)

    def test_cdf_against_quadrature_of_own_pdf(self):
        for nu in (1, 5, 10):
            for t in (-4.0, -1.0, 0.5, 3.0):
                area, err = integrate.quad(lambda u: t_pdf(u, nu), 0.0, t)
                assert t_cdf(t, nu) == pytest.approx(0.5 + area, abs=1e-9)

    def test_cauchy_closed_form(self):
        # nu=1 is Cauchy: cdf(t) = 1/2 + atan(t)/pi
        for t in (-3.0, 0.0, 0.7, 5.0):
            assert t_cdf(t, 1) == pytest.approx(0.5 + math.atan(t) / math.pi, abs=1e-12)

    def test_quantile_known_value(self):
        # classic two-sided 95% point for nu=10
        assert t_quantile(0.975, 10) == pytest.approx(2.2281, abs=1e-4)

    def test_quantile_cdf_roundtrip(self):
        for nu in (1, 5, 98):
            for p in (1e-6, 0.02, 0.5, 0.77, 0.9995, 1 - 1e-9):
                assert t_cdf(t_quantile(p, nu), nu) == pytest.approx(p, abs=1e-10)

    def test_cdf_quantile_roundtrip_central(self):
        for nu in (1, 5, 98):
            for t in np.linspace(-3, 3, 13):
                assert t_quantile(t_cdf(t, nu), nu) == pytest.approx(t, abs=1e-8)

    def test_symmetry(self):
        assert t_quantile(0.25, 7) == pytest.approx(-t_quantile(0.75, 7), abs=1e-12)
        assert t_cdf(-2.0, 7) == pytest.approx(1 - t_cdf(2.0, 7), abs=1e-14)

    @settings(max_examples=60, deadline=None)
    @given(
        st.floats(min_value=-20, max_value=20),
        st.floats(min_value=-20, max_value=20),
        st.sampled_from([1, 3, 10, 50]),
    )
    def test_cdf_monotone(self, t1, t2, nu):
        lo, hi = sorted((t1, t2))
        assert t_cdf(lo, nu) <= t_cdf(hi, nu) + 1e-15

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            t_cdf(0.0, 0)
        with pytest.raises(ValueError):
            t_quantile(1.0, 5)
        with pytest.raises(ValueError):
            t_quantile(0.0, 5)


class TestGrubbs:
    def test_threshold_small_sample(self):
        assert grubbs_threshold(3, 0.05) == pytest.approx(1.1531, abs=1e-3)

    def test_threshold_tabulated(self):
        # published one-sided critical values
        assert grubbs_threshold(10, 0.05) == pytest.approx(2.176, abs=2e-3)
        assert grubbs_threshold(20, 0.05) == pytest.approx(2.557, abs=2e-3)

    def test_threshold_needs_three(self):
        with pytest.raises(ValueError, match="n >= 3"):
            grubbs_threshold(2, 0.05)

    def test_value_at_mean_is_belonging(self):
        d = make_dist(mu=5.0, sigma=2.0)
        out = grubbs_decide(5.0, d)
        assert out.is_belonging
        assert out.z_score == 0.0

    def test_extreme_outlier_is_non_belonging(self):
        d = make_dist(mu=5.0, sigma=2.0)
        out = grubbs_decide(5.0 + 100 * 2.0, d)
        assert not out.is_belonging
        assert out.z_score == pytest.approx(100.0)

    def test_below_mean_is_belonging(self):
        # the test is one-sided: only suspiciously HIGH losses are outliers
        d = make_dist(mu=5.0, sigma=2.0)
        assert grubbs_decide(0.0, d).is_belonging

    def test_scale_invariance(self):
        d1 = make_dist(mu=0.01, sigma=0.004)
        for c in (1e-3, 1.0, 1e4):
            d2 = make_dist(mu=0.01 * c, sigma=0.004 * c)
            for loss in (0.009, 0.02, 0.05):
                a = grubbs_decide(loss, d1)
                b = grubbs_decide(loss * c, d2)
                assert a.is_belonging == b.is_belonging
                assert a.z_score == pytest.approx(b.z_score, rel=1e-12)

    def test_decision_flips_at_threshold(self):
        d = make_dist(mu=0.0, sigma=1.0, n=100, alpha=0.05)
        g = d.threshold
        assert grubbs_decide(g - 1e-9, d).is_belonging
        assert not grubbs_decide(g + 1e-9, d).is_belonging


class TestBelongingDistribution:
    def test_requires_three_samples(self):
        with pytest.raises(ValueError, match="n >= 3"):
            make_dist(n=2)

    def test_zero_sigma_degenerate(self):
        with pytest.raises(DegenerateDistributionError):
            make_dist(sigma=0.0)

    def test_alpha_domain(self):
        with pytest.raises(ValueError):
            make_dist(alpha=0.0)
        with pytest.raises(ValueError):
            make_dist(alpha=1.5)

    def test_json_roundtrip_fields(self):
        d = make_dist()
        j = d.to_json_dict()
        assert j["mu"] == d.mu and j["n"] == d.n
        assert BelongingDistribution(**j) == d

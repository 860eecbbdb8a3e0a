"""Variance-law tests: densities, sampling, moments, expectations, delta_k."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from supermix.variance import (
    Contaminated,
    ExpectationError,
    InverseGamma,
    MonteCarlo,
    PointMass,
    Quadrature,
    VarianceModelError,
    cdf,
    delta_k,
    delta_k_discrete,
    density,
    expect,
    expectation_nodes,
    mc_nodes,
    moments,
    sample,
    unit_covariance_family,
)


class TestDensity:
    def test_inverse_gamma_at_one(self):
        # c^a d^{-a-1} e^{-c/d} / Gamma(a) at a=c=d=1 is e^{-1}
        assert density(InverseGamma(1.0, 1.0), 1.0) == pytest.approx(math.exp(-1.0), rel=1e-12)

    def test_essential_singularity_at_origin(self):
        assert density(InverseGamma(3.0, 2.0), 1e-8) == 0.0

    def test_point_mass_has_no_continuous_part(self):
        assert density(PointMass(2.0), 2.0) == 0.0

    def test_contaminated_scales_tail(self):
        m = Contaminated(0.3, 2.0, 1.0)
        assert density(m, 1.5) == pytest.approx(0.3 * density(InverseGamma(2.0, 1.0), 1.5))

    @pytest.mark.parametrize("a", [0.5, 1.0, 2.0, 5.0])
    @pytest.mark.parametrize("c", [0.5, 1.0, 4.0])
    def test_normalization(self, a, c):
        # adaptive quadrature oracle, integrating in the well-scaled variable
        # t = c/delta (Gamma(a,1) density) to handle the heavy tail
        val, _ = integrate.quad(
            lambda t: density(InverseGamma(a, c), c / t) * c / t ** 2, 0.0, np.inf, limit=300)
        assert val == pytest.approx(1.0, abs=1e-6)

    def test_domain_error(self):
        with pytest.raises(VarianceModelError):
            density(InverseGamma(2.0, 1.0), 0.0)
        with pytest.raises(VarianceModelError):
            density(InverseGamma(2.0, 1.0), -1.0)


class TestSampling:
    def test_point_mass_degenerate(self):
        assert sample(PointMass(2.0), 5, seed=0).tolist() == [2.0] * 5

    def test_positive(self):
        for m in (InverseGamma(0.5, 1.0), Contaminated(0.5, 0.5, 1.0)):
            assert np.all(sample(m, 10_000, seed=1) > 0)

    def test_inverse_gamma_mean(self):
        # E[Delta] = c/(a-1) = 1 for (2, 1); use the sample's own stderr
        x = sample(InverseGamma(2.0, 1.0), 1_000_000, seed=2)
        se = x.std(ddof=1) / math.sqrt(x.size)
        assert abs(x.mean() - 1.0) < 3 * se

    def test_determinism(self):
        a = sample(InverseGamma(2.0, 1.0), 100, seed=42)
        b = sample(InverseGamma(2.0, 1.0), 100, seed=42)
        np.testing.assert_array_equal(a, b)

    def test_needs_positive_count(self):
        with pytest.raises(VarianceModelError):
            sample(PointMass(1.0), 0, seed=0)

    @pytest.mark.parametrize("model", [InverseGamma(2.0, 1.0), InverseGamma(0.5, 1.0)])
    def test_kolmogorov_smirnov(self, model):
        x = np.sort(sample(model, 100_000, seed=3))
        grid = cdf(model, x)
        n = x.size
        ecdf_hi = np.arange(1, n + 1) / n
        ecdf_lo = np.arange(0, n) / n
        ks = max(np.max(np.abs(ecdf_hi - grid)), np.max(np.abs(grid - ecdf_lo)))
        assert ks < 0.01

    def test_contaminated_mixture_structure(self):
        m = Contaminated(0.4, 2.0, 1.0)
        x = sample(m, 100_000, seed=4)
        atom_frac = np.mean(x == 1.0)
        se = math.sqrt(0.6 * 0.4 / x.size)
        assert abs(atom_frac - 0.6) < 4 * se
        tail = np.sort(x[x != 1.0])
        grid = cdf(InverseGamma(2.0, 1.0), tail)
        n = tail.size
        ks = np.max(np.abs(np.arange(1, n + 1) / n - grid))
        assert ks < 0.02


class TestMoments:
    def test_point_mass(self):
        rep = moments(PointMass(1.0))
        assert (rep.mean_delta, rep.inv_mean, rep.inv_sq_mean) == (1.0, 1.0, 1.0)
        assert rep.mean_finite and rep.inv_finite and rep.inv_sq_finite

    def test_inverse_gamma_closed_forms(self):
        rep = moments(InverseGamma(2.0, 1.0))
        assert rep.mean_delta == pytest.approx(1.0)
        assert rep.inv_mean == pytest.approx(2.0)
        assert rep.inv_sq_mean == pytest.approx(6.0)
        # quadrature cross-check of the inverse moments
        for k, want in ((1, 2.0), (2, 6.0)):
            got = expect(InverseGamma(2.0, 1.0), lambda d, k=k: d ** (-k), Quadrature()).value
            assert got == pytest.approx(want, rel=1e-8)

    def test_heavy_tail_mean_is_infinite(self):
        rep = moments(InverseGamma(0.5, 1.0))
        assert math.isinf(rep.mean_delta) and not rep.mean_finite
        assert rep.inv_finite and rep.inv_sq_finite

    def test_jensen(self):
        for m in (PointMass(0.7), InverseGamma(3.0, 2.0), Contaminated(0.5, 2.0, 1.0)):
            rep = moments(m)
            assert rep.inv_sq_mean >= rep.inv_mean ** 2 - 1e-12

    def test_mixture_combines_linearly(self):
        m = Contaminated(0.25, 3.0, 2.0)
        tail = moments(InverseGamma(3.0, 2.0))
        rep = moments(m)
        assert rep.inv_mean == pytest.approx(0.25 * tail.inv_mean + 0.75)

    def test_unit_covariance_family(self):
        assert moments(unit_covariance_family(7.0)).mean_delta == pytest.approx(1.0)
        with pytest.raises(VarianceModelError):
            unit_covariance_family(1.0)


class TestExpect:
    def test_point_mass_identity(self):
        assert expect(PointMass(2.0), lambda d: d).value == 2.0

    def test_normalization_constant(self):
        for m in (PointMass(3.0), InverseGamma(0.5, 1.0), Contaminated(0.5, 0.5, 1.0)):
            assert expect(m, lambda d: np.ones_like(d), Quadrature()).value == pytest.approx(1.0, abs=1e-8)

    def test_inverse_moment_both_methods(self):
        m = InverseGamma(2.0, 1.0)
        quad = expect(m, lambda d: 1.0 / d, Quadrature())
        mc = expect(m, lambda d: 1.0 / d, MonteCarlo(200_000, seed=5))
        assert quad.value == pytest.approx(2.0, rel=1e-8)
        assert quad.stderr is None
        assert abs(mc.value - 2.0) < 4 * mc.stderr

    def test_atom_handled_analytically(self):
        # integrand defined only at the atom would break any sampler near 1
        m = Contaminated(0.0, 0.5, 1.0)
        assert expect(m, lambda d: np.where(d == 1.0, 5.0, np.nan)).value == 5.0

    def test_nonfinite_integrand_reported(self):
        with np.errstate(divide="ignore"), pytest.raises(ExpectationError, match="Delta"):
            expect(PointMass(1.0), lambda d: 1.0 / (d - 1.0))


class TestDeltaK:
    def test_v_zero(self):
        for m in (PointMass(2.0), InverseGamma(0.5, 1.0), Contaminated(0.3, 2.0, 1.0)):
            assert delta_k(m, 0.0, 1) == 1.0

    def test_point_mass_values(self):
        assert delta_k(PointMass(1.0), 1.0, 1) == pytest.approx(0.5)
        assert delta_k(PointMass(1.0), 1.0, 2) == pytest.approx(0.25)

    def test_inverse_gamma_vs_mc_oracle(self):
        m = InverseGamma(2.0, 1.0)
        d = sample(m, 1_000_000, seed=6)
        for k in (1, 2):
            vals = (1.0 + d) ** (-k)
            se = vals.std(ddof=1) / 1000.0
            assert abs(delta_k(m, 1.0, k) - vals.mean()) < 3 * se

    def test_large_shape_fallback_path(self):
        # a = 10^4 routes through adaptive quadrature; near the point mass at 1
        val = delta_k(InverseGamma(1e4, 1e4 - 1.0), 1.0, 1)
        assert val == pytest.approx(0.5, abs=1e-3)

    def test_discrete_matches_nodes(self):
        m = InverseGamma(2.0, 1.0)
        d, w = expectation_nodes(m, 512)
        assert delta_k_discrete(d, w, 0.7, 2) == pytest.approx(delta_k(m, 0.7, 2), abs=1e-7)

    def test_negative_v_rejected(self):
        with pytest.raises(VarianceModelError):
            delta_k(PointMass(1.0), -0.1, 1)

    @given(st.floats(min_value=0.3, max_value=20.0), st.floats(min_value=0.3, max_value=5.0),
           st.floats(min_value=1e-3, max_value=50.0))
    @settings(max_examples=40, deadline=None)
    def test_bounds_and_ordering(self, a, c, v):
        m = InverseGamma(a, c)
        d1 = delta_k(m, v, 1)
        d2 = delta_k(m, v, 2)
        assert 0.0 < d2 <= d1 <= 1.0
        assert delta_k(m, 2.0 * v, 1) <= d1 + 1e-12


class TestMixtureLimits:
    """Contaminated(r=1) must equal the tail; r=0 must equal PointMass(1)."""

    def test_full_contamination(self):
        full = Contaminated(1.0, 2.0, 1.0)
        tail = InverseGamma(2.0, 1.0)
        for v in (0.1, 1.0, 10.0):
            assert delta_k(full, v, 1) == pytest.approx(delta_k(tail, v, 1), rel=1e-12)
        assert expect(full, np.sqrt, Quadrature()).value == pytest.approx(
            expect(tail, np.sqrt, Quadrature()).value, rel=1e-10)

    def test_no_contamination(self):
        none = Contaminated(0.0, 2.0, 1.0)
        for v in (0.1, 1.0, 10.0):
            assert delta_k(none, v, 1) == pytest.approx(delta_k(PointMass(1.0), v, 1), rel=1e-12)
        assert moments(none).mean_delta == pytest.approx(1.0)


class TestNodes:
    def test_expectation_nodes_accuracy(self):
        for m in (InverseGamma(2.0, 1.0), InverseGamma(0.5, 1.0), Contaminated(0.5, 0.5, 1.0)):
            d, w = expectation_nodes(m, 512)
            assert w.sum() == pytest.approx(1.0, abs=1e-12)
            for f in (lambda x: 1.0 / (1.0 + x), lambda x: np.exp(-x)):
                want = expect(m, f, Quadrature()).value
                assert w @ f(d) == pytest.approx(want, abs=5e-7)

    def test_mc_nodes_keep_atom_exact(self):
        d, w = mc_nodes(Contaminated(0.4, 2.0, 1.0), 1000, seed=0)
        assert w.sum() == pytest.approx(1.0)
        assert d[0] == 1.0 and w[0] == pytest.approx(0.6)

    def test_validation(self):
        with pytest.raises(VarianceModelError):
            PointMass(0.0)
        with pytest.raises(VarianceModelError):
            InverseGamma(-1.0, 1.0)
        with pytest.raises(VarianceModelError):
            Contaminated(1.5, 1.0, 1.0)

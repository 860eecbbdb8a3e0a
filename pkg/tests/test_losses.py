"""Loss and proximal-map tests against grid/bisection oracles."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq
from scipy.special import expit

from supermix.losses import (
    LossKind,
    ProxDomainError,
    _prox_root,
    logistic_curvature,
    loss,
    prox,
    prox_logistic,
    prox_square,
)


def objective(kind, y, u, omega, kappa):
    return (u - omega) ** 2 / (2.0 * kappa) + loss(kind, y, u)


class TestLossValues:
    def test_square_zero_at_label(self):
        assert loss(LossKind.SQUARE, 1, 1.0) == 0.0

    def test_logistic_at_origin(self):
        assert loss(LossKind.LOGISTIC, 1, 0.0) == pytest.approx(math.log(2.0), rel=1e-12)

    def test_logistic_negative_label(self):
        assert loss(LossKind.LOGISTIC, -1, -3.0) == pytest.approx(math.log1p(math.exp(-3.0)), rel=1e-12)

    @pytest.mark.parametrize("kind", [LossKind.SQUARE, LossKind.LOGISTIC])
    def test_label_flip_symmetry(self, kind):
        etas = np.linspace(-8, 8, 41)
        np.testing.assert_allclose(loss(kind, 1, etas), loss(kind, -1, -etas), rtol=1e-13)

    def test_label_validation(self):
        with pytest.raises(ProxDomainError):
            loss(LossKind.SQUARE, 0, 1.0)


class TestCurvature:
    def test_peak_value(self):
        assert logistic_curvature(0.0) == pytest.approx(0.25)

    def test_even_and_value(self):
        # 1/(4 cosh(5)^2) = 4.5396e-5
        want = 1.0 / (4.0 * math.cosh(5.0) ** 2)
        assert logistic_curvature(10.0) == pytest.approx(want, rel=1e-10)
        assert logistic_curvature(-10.0) == logistic_curvature(10.0)

    def test_decays_without_overflow(self):
        assert logistic_curvature(2000.0) == 0.0
        assert logistic_curvature(np.array([-3000.0, 3000.0])).tolist() == [0.0, 0.0]


class TestSquareProx:
    def test_simple_closed_form(self):
        r = prox(LossKind.SQUARE, 1, 0.0, 1.0)
        assert (r.h, r.f) == (0.5, 0.5)

    def test_derived_grid_oracle(self):
        r = prox(LossKind.SQUARE, 1, 2.0, 3.0)
        assert r.h == pytest.approx(1.25, abs=1e-12)
        assert r.f == pytest.approx(-0.25, abs=1e-12)
        grid = np.linspace(r.h - 1.0, r.h + 1.0, 20001)
        assert objective(LossKind.SQUARE, 1, r.h, 2.0, 3.0) <= objective(
            LossKind.SQUARE, 1, grid, 2.0, 3.0).min() + 1e-12

    def test_matches_generic_numerical_prox(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            y = 1 if rng.random() < 0.5 else -1
            omega = float(rng.normal(0, 4))
            kappa = float(rng.uniform(0.05, 20.0))
            h_cf, _ = prox_square(y, omega, kappa)
            h_num = _prox_root(lambda u: u - y, lambda u: np.ones_like(u),
                               np.array([omega]), kappa, 1e-14, 200)[0]
            assert h_num == pytest.approx(h_cf, abs=1e-10)


class TestLogisticProx:
    def test_bisection_oracle_at_origin(self):
        # root of u = sigma(-u)
        want = brentq(lambda u: u - expit(-u), 0.0, 1.0, xtol=1e-14)
        r = prox(LossKind.LOGISTIC, 1, 0.0, 1.0)
        assert r.h == pytest.approx(want, abs=1e-10)
        assert r.h == pytest.approx(0.4010, abs=1e-4)

    def test_vanishing_gradient_far_from_margin(self):
        r = prox(LossKind.LOGISTIC, 1, 30.0, 1.0)
        assert r.h == pytest.approx(30.0, abs=1e-10)
        assert 0 <= r.f < 1e-12

    def test_stationarity_contract(self):
        rng = np.random.default_rng(1)
        for _ in range(300):
            y = 1 if rng.random() < 0.5 else -1
            omega = float(rng.normal(0, 10))
            kappa = float(10 ** rng.uniform(-3, 4))
            r = prox(LossKind.LOGISTIC, y, omega, kappa, tol=1e-12)
            lprime = -y * expit(-y * r.h)
            assert abs((r.h - omega) / kappa + lprime) <= 1e-11

    def test_residual_sign_convention(self):
        # f = -loss'(h): positive for the +1 label, negative for -1
        assert 0.0 < prox(LossKind.LOGISTIC, 1, 0.3, 2.0).f < 1.0
        assert -1.0 < prox(LossKind.LOGISTIC, -1, 0.3, 2.0).f < 0.0

    def test_warm_start_agrees_with_cold(self):
        omega = np.linspace(-30, 30, 101)
        kappa = np.full_like(omega, 3.0)
        h_cold, _ = prox_logistic(1, omega, kappa)
        h_warm, _ = prox_logistic(1, omega, kappa, u0=h_cold + 0.3)
        np.testing.assert_allclose(h_warm, h_cold, atol=1e-9)

    def test_kappa_validation(self):
        with pytest.raises(ProxDomainError):
            prox(LossKind.LOGISTIC, 1, 0.0, 0.0)
        with pytest.raises(ProxDomainError):
            prox(LossKind.SQUARE, 1, 0.0, -1.0)


class TestProxProperties:
    @pytest.mark.parametrize("kind", [LossKind.SQUARE, LossKind.LOGISTIC])
    def test_grid_dominance(self, kind):
        # the returned h beats a dense grid around it on the prox objective
        rng = np.random.default_rng(2)
        for _ in range(1000):
            y = 1 if rng.random() < 0.5 else -1
            omega = float(rng.normal(0, 5))
            kappa = float(10 ** rng.uniform(-2, 2))
            r = prox(kind, y, omega, kappa)
            grid = r.h + np.linspace(-2.0, 2.0, 401)
            assert objective(kind, y, r.h, omega, kappa) <= objective(
                kind, y, grid, omega, kappa).min() + 1e-9

    @pytest.mark.parametrize("kind", [LossKind.SQUARE, LossKind.LOGISTIC])
    def test_odd_symmetry(self, kind):
        rng = np.random.default_rng(3)
        for _ in range(200):
            y = 1 if rng.random() < 0.5 else -1
            omega = float(rng.normal(0, 5))
            kappa = float(10 ** rng.uniform(-2, 2))
            a = prox(kind, y, omega, kappa)
            b = prox(kind, -y, -omega, kappa)
            assert b.h == pytest.approx(-a.h, abs=1e-9)
            assert b.f == pytest.approx(-a.f, abs=1e-9)

    @given(st.sampled_from([LossKind.SQUARE, LossKind.LOGISTIC]),
           st.sampled_from([-1, 1]),
           st.floats(min_value=-20, max_value=20),
           st.floats(min_value=-20, max_value=20),
           st.floats(min_value=0.01, max_value=100.0))
    @settings(max_examples=80, deadline=None)
    def test_monotone_nonexpansive_in_omega(self, kind, y, om1, om2, kappa):
        h1 = prox(kind, y, om1, kappa).h
        h2 = prox(kind, y, om2, kappa).h
        if om2 < om1:
            om1, om2, h1, h2 = om2, om1, h2, h1
        assert h2 - h1 >= -1e-9                     # monotone
        assert h2 - h1 <= (om2 - om1) + 1e-9        # 1-Lipschitz

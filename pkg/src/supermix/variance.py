"""Scalar variance laws for Gaussian scale-mixture data clouds.

A cloud sample is drawn as ``x = centroid + sqrt(Delta) * z`` with
``z ~ N(0, I)`` and the scalar variance ``Delta`` drawn from a law on
``(0, inf)``.  Three laws are supported:

* :class:`PointMass` -- a degenerate law ``Delta == delta0`` (plain
  Gaussian clouds),
* :class:`InverseGamma` -- the two-parameter heavy-tailed family with
  density ``c^a Delta^(-a-1) exp(-c/Delta) / Gamma(a)``,
* :class:`Contaminated` -- a Huber-style mixture
  ``r * InverseGamma(a, c) + (1 - r) * delta(Delta - 1)``.

The module provides densities, sampling, closed-form moments, generic
expectations ``E[f(Delta)]`` (Monte Carlo or quadrature) and the resolvent
moments ``delta_k(v) = E[(1 + v*Delta)^-k]`` that drive the square-loss
fixed-point equations.  Everything is deterministic given the model and a
seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
from scipy import integrate, special, stats


class VarianceModelError(ValueError):
    """Invalid parameter or argument for a variance model operation."""


class MomentConditionError(VarianceModelError):
    """A required moment of the variance law is infinite."""


class ExpectationError(RuntimeError):
    """A numerical expectation could not be evaluated."""


# ---------------------------------------------------------------------------
# model variants
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PointMass:
    """Degenerate variance law: every sample has variance ``delta0``."""

    delta0: float

    def __post_init__(self):
        if not (np.isfinite(self.delta0) and self.delta0 > 0):
            raise VarianceModelError(f"PointMass requires delta0 > 0, got {self.delta0}")


@dataclass(frozen=True)
class InverseGamma:
    """Inverse-Gamma variance law with shape ``a`` and scale ``c``.

    Sampling uses ``Delta = c / G`` with ``G`` a unit-scale Gamma(a)
    variate.  The mean ``c / (a - 1)`` is finite only for ``a > 1``; the
    inverse moments ``E[Delta^-1] = a/c`` and ``E[Delta^-2] = a(a+1)/c^2``
    are always finite.
    """

    a: float
    c: float

    def __post_init__(self):
        if not (np.isfinite(self.a) and self.a > 0):
            raise VarianceModelError(f"InverseGamma requires shape a > 0, got {self.a}")
        if not (np.isfinite(self.c) and self.c > 0):
            raise VarianceModelError(f"InverseGamma requires scale c > 0, got {self.c}")


@dataclass(frozen=True)
class Contaminated:
    """Mixture ``r * InverseGamma(a, c) + (1 - r) * PointMass(1)``.

    The atom at ``Delta = 1`` is always handled analytically in
    expectations; only the continuous component is ever integrated or
    sampled for quadrature purposes.
    """

    r: float
    a: float
    c: float

    def __post_init__(self):
        if not (0.0 <= self.r <= 1.0):
            raise VarianceModelError(f"Contaminated requires weight r in [0, 1], got {self.r}")
        InverseGamma(self.a, self.c)  # validates a, c

    @property
    def tail(self) -> InverseGamma:
        return InverseGamma(self.a, self.c)


VarianceModel = Union[PointMass, InverseGamma, Contaminated]


def unit_covariance_family(a: float) -> InverseGamma:
    """Inverse-Gamma law with scale ``c = a - 1`` so that ``E[Delta] = 1``.

    Requires ``a > 1``.  Sweeping ``a`` inside this family changes the tail
    exponent at fixed population covariance; ``a -> inf`` recovers Gaussian
    clouds with unit covariance.
    """
    if a <= 1:
        raise VarianceModelError(f"unit covariance family needs a > 1, got {a}")
    return InverseGamma(a, a - 1.0)


# ---------------------------------------------------------------------------
# density / cdf / sampling
# ---------------------------------------------------------------------------

def _ig_log_density(a: float, c: float, delta):
    return a * math.log(c) - special.gammaln(a) - (a + 1.0) * np.log(delta) - c / delta


def density(model: VarianceModel, delta) -> np.ndarray | float:
    """Continuous part of the variance density at ``delta`` (> 0).

    Atoms (the whole :class:`PointMass` law, the ``Delta = 1`` atom of
    :class:`Contaminated`) carry no density and contribute 0 here.
    """
    d = np.asarray(delta, dtype=float)
    if np.any(d <= 0) or not np.all(np.isfinite(d)):
        raise VarianceModelError("density is defined for finite delta > 0")
    if isinstance(model, PointMass):
        out = np.zeros_like(d)
    elif isinstance(model, InverseGamma):
        out = np.exp(_ig_log_density(model.a, model.c, d))
    elif isinstance(model, Contaminated):
        out = model.r * np.exp(_ig_log_density(model.a, model.c, d))
    else:
        raise TypeError(f"unknown variance model {model!r}")
    return out if out.ndim else float(out)


def cdf(model: VarianceModel, delta) -> np.ndarray | float:
    """P(Delta <= delta), atoms included."""
    d = np.asarray(delta, dtype=float)
    if isinstance(model, PointMass):
        out = (d >= model.delta0).astype(float)
    elif isinstance(model, InverseGamma):
        # Delta = c/G with G ~ Gamma(a): P(Delta <= d) = P(G >= c/d)
        out = special.gammaincc(model.a, model.c / np.maximum(d, 1e-300))
        out = np.where(d <= 0, 0.0, out)
    elif isinstance(model, Contaminated):
        out = model.r * cdf(model.tail, d) + (1.0 - model.r) * (d >= 1.0)
    else:
        raise TypeError(f"unknown variance model {model!r}")
    return out if out.ndim else float(out)


def sample(model: VarianceModel, n: int, seed: int) -> np.ndarray:
    """Draw ``n`` i.i.d. variances; deterministic given ``seed``."""
    if n < 1:
        raise VarianceModelError(f"sample needs n >= 1, got {n}")
    rng = np.random.default_rng(seed)
    return _sample_rng(model, n, rng)


def _sample_rng(model: VarianceModel, n: int, rng: np.random.Generator) -> np.ndarray:
    if isinstance(model, PointMass):
        return np.full(n, model.delta0)
    if isinstance(model, InverseGamma):
        return model.c / rng.gamma(model.a, 1.0, size=n)
    if isinstance(model, Contaminated):
        out = np.ones(n)
        tail = rng.random(n) < model.r
        k = int(tail.sum())
        if k:
            out[tail] = model.c / rng.gamma(model.a, 1.0, size=k)
        return out
    raise TypeError(f"unknown variance model {model!r}")


# ---------------------------------------------------------------------------
# moments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MomentReport:
    """E[Delta], E[Delta^-1], E[Delta^-2]; infinities are values, not errors."""

    mean_delta: float
    inv_mean: float
    inv_sq_mean: float

    @property
    def mean_finite(self) -> bool:
        return math.isfinite(self.mean_delta)

    @property
    def inv_finite(self) -> bool:
        return math.isfinite(self.inv_mean)

    @property
    def inv_sq_finite(self) -> bool:
        return math.isfinite(self.inv_sq_mean)


def moments(model: VarianceModel) -> MomentReport:
    """Closed-form moment report; mixture components combine linearly."""
    if isinstance(model, PointMass):
        d0 = model.delta0
        return MomentReport(d0, 1.0 / d0, 1.0 / d0 ** 2)
    if isinstance(model, InverseGamma):
        a, c = model.a, model.c
        mean = c / (a - 1.0) if a > 1.0 else math.inf
        return MomentReport(mean, a / c, a * (a + 1.0) / c ** 2)
    if isinstance(model, Contaminated):
        r = model.r
        if r == 0.0:
            return moments(PointMass(1.0))
        tail = moments(model.tail)
        return MomentReport(
            r * tail.mean_delta + (1.0 - r),
            r * tail.inv_mean + (1.0 - r),
            r * tail.inv_sq_mean + (1.0 - r),
        )
    raise TypeError(f"unknown variance model {model!r}")


# ---------------------------------------------------------------------------
# expectations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MonteCarlo:
    """Monte Carlo expectation rule: ``n`` samples from a fixed ``seed``."""

    n: int = 100_000
    seed: int = 0


@dataclass(frozen=True)
class Quadrature:
    """Deterministic quadrature rule.

    ``tol`` drives adaptive integration in :func:`expect`; ``nodes`` sets
    the size of the fixed node sets used by :func:`expectation_nodes`.
    """

    tol: float = 1e-10
    nodes: int = 512


ExpectMethod = Union[MonteCarlo, Quadrature]


@dataclass(frozen=True)
class Expectation:
    value: float
    stderr: Optional[float]  # None for quadrature estimates


def _check_finite(vals: np.ndarray, deltas: np.ndarray):
    bad = ~np.isfinite(vals)
    if np.any(bad):
        d = float(np.asarray(deltas)[bad][0]) if np.asarray(deltas).shape else float(deltas)
        raise ExpectationError(f"integrand is not finite at Delta = {d}")


def expect(model: VarianceModel, f: Callable, method: ExpectMethod = MonteCarlo()) -> Expectation:
    """Estimate ``E[f(Delta)]``.

    ``f`` must accept numpy arrays.  Atoms are always evaluated exactly;
    only continuous components are sampled or integrated.
    """
    if isinstance(model, PointMass):
        v = float(np.asarray(f(np.array([model.delta0])))[0])
        _check_finite(np.array([v]), np.array([model.delta0]))
        return Expectation(v, 0.0 if isinstance(method, MonteCarlo) else None)
    if isinstance(model, Contaminated):
        atom = float(np.asarray(f(np.array([1.0])))[0])
        _check_finite(np.array([atom]), np.array([1.0]))
        if model.r == 0.0:
            return Expectation(atom, 0.0 if isinstance(method, MonteCarlo) else None)
        tail = expect(model.tail, f, method)
        se = None if tail.stderr is None else model.r * tail.stderr
        return Expectation(model.r * tail.value + (1.0 - model.r) * atom, se)

    # InverseGamma
    if isinstance(method, MonteCarlo):
        deltas = sample(model, method.n, method.seed)
        vals = np.asarray(f(deltas), dtype=float)
        _check_finite(vals, deltas)
        return Expectation(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(method.n)))
    # adaptive quadrature in t = c / Delta ~ Gamma(a, 1), the well-scaled variable
    a, c = model.a, model.c
    lognorm = special.gammaln(a)

    def g(t):
        val = f(np.array([c / t]))[0] * math.exp((a - 1.0) * math.log(t) - t - lognorm)
        return val

    try:
        if a > 2.0:
            v1, _ = integrate.quad(g, 0.0, 8.0 * a, points=[a], limit=400,
                                   epsabs=method.tol, epsrel=method.tol)
            v2, _ = integrate.quad(g, 8.0 * a, np.inf, limit=200,
                                   epsabs=method.tol, epsrel=method.tol)
            val = v1 + v2
        else:
            val, _ = integrate.quad(g, 0.0, np.inf, limit=400,
                                    epsabs=method.tol, epsrel=method.tol)
    except Exception as exc:  # pragma: no cover - quadpack failure surface
        raise ExpectationError(f"quadrature failed for {model!r}: {exc}") from exc
    if not math.isfinite(val):
        raise ExpectationError(f"quadrature returned non-finite value for {model!r}")
    return Expectation(float(val), None)


def expectation_nodes(model: VarianceModel, n: int = 512) -> tuple[np.ndarray, np.ndarray]:
    """Fixed nodes/weights such that ``E[f(Delta)] ~= weights @ f(deltas)``.

    Built from Gauss-Legendre points mapped through the quantile function,
    which is robust for every shape parameter (heavy tails included) for
    bounded smooth integrands.  Atoms appear as explicit nodes.
    """
    if isinstance(model, PointMass):
        return np.array([model.delta0]), np.array([1.0])
    if isinstance(model, InverseGamma):
        x, w = special.roots_legendre(n)
        p = 0.5 * (x + 1.0)
        deltas = stats.invgamma.ppf(p, model.a, scale=model.c)
        return deltas, 0.5 * w
    if isinstance(model, Contaminated):
        if model.r == 0.0:
            return np.array([1.0]), np.array([1.0])
        d, w = expectation_nodes(model.tail, n)
        return np.concatenate(([1.0], d)), np.concatenate(([1.0 - model.r], model.r * w))
    raise TypeError(f"unknown variance model {model!r}")


def mc_nodes(model: VarianceModel, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo node set (samples with equal weights).

    For :class:`Contaminated` the atom keeps its exact weight ``1 - r`` and
    only the heavy tail is sampled.
    """
    if isinstance(model, PointMass):
        return np.array([model.delta0]), np.array([1.0])
    if isinstance(model, InverseGamma):
        return sample(model, n, seed), np.full(n, 1.0 / n)
    if isinstance(model, Contaminated):
        if model.r == 0.0:
            return np.array([1.0]), np.array([1.0])
        d = sample(model.tail, n, seed)
        return np.concatenate(([1.0], d)), np.concatenate(([1.0 - model.r], np.full(n, model.r / n)))
    raise TypeError(f"unknown variance model {model!r}")


# ---------------------------------------------------------------------------
# resolvent moments  delta_k(v) = E[(1 + v*Delta)^-k]
# ---------------------------------------------------------------------------

def _ig_delta_k_quad(a: float, c: float, s: float, k: int) -> float:
    # t = c/Delta ~ Gamma(a, 1):  E[(1+v*Delta)^-k] = E[(t/(t+s))^k], s = v*c
    lognorm = special.gammaln(a)

    def g(t):
        return math.exp(k * (math.log(t) - math.log(t + s)) + (a - 1.0) * math.log(t) - t - lognorm)

    if a > 2.0:
        val = integrate.quad(g, 0.0, 8.0 * a, points=[a], limit=400)[0]
        val += integrate.quad(g, 8.0 * a, np.inf, limit=200)[0]
    else:
        val = integrate.quad(g, 0.0, np.inf, limit=400)[0]
    return val


def _ig_delta_k(a: float, c: float, v: float, k: int) -> float:
    s = v * c
    if s == 0.0:
        return 1.0
    if a <= 30.0:
        # closed form via the Tricomi confluent hypergeometric function
        u = special.hyperu(a + k, a + 1.0, s)
        if np.isfinite(u) and u > 0.0:
            logval = a * math.log(s) + special.gammaln(a + k) - special.gammaln(a) + math.log(u)
            if logval < 0.0:
                return math.exp(logval)
    return _ig_delta_k_quad(a, c, s, k)


def delta_k(model: VarianceModel, v: float, k: int = 1) -> float:
    """Resolvent moment ``E[(1 + v*Delta)^-k]`` for ``v >= 0``.

    Monotone decreasing in ``v`` with values in ``(0, 1]``; closed-form for
    point masses, hypergeometric/quadrature for inverse-Gamma tails.
    """
    if v < 0:
        raise VarianceModelError(f"delta_k requires v >= 0, got {v}")
    if k < 1:
        raise VarianceModelError(f"delta_k requires k >= 1, got {k}")
    if isinstance(model, PointMass):
        return float((1.0 + v * model.delta0) ** (-k))
    if isinstance(model, InverseGamma):
        return _ig_delta_k(model.a, model.c, v, k)
    if isinstance(model, Contaminated):
        atom = (1.0 + v) ** (-k)
        if model.r == 0.0:
            return float(atom)
        return float(model.r * _ig_delta_k(model.a, model.c, v, k) + (1.0 - model.r) * atom)
    raise TypeError(f"unknown variance model {model!r}")


def delta_k_discrete(deltas: np.ndarray, weights: np.ndarray, v: float, k: int = 1) -> float:
    """delta_k evaluated on an explicit node set (shared Monte Carlo draws)."""
    if v < 0:
        raise VarianceModelError(f"delta_k requires v >= 0, got {v}")
    return float(weights @ (1.0 + v * deltas) ** (-k))

"""Asymptotic error metrics: test/training errors, Bayes bound, random labels.

All probabilities are expressed through the standard normal CDF, computed
via the complementary error function: Phi(x) = erfc(-x / sqrt(2)) / 2 and
tail Phi_hat(x) = 1 - Phi(x) = erfc(x / sqrt(2)) / 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import erfc

from .state_evolution import (
    OrderParams,
    ProblemSpec,
    SolverConfig,
    channel_moments,
    delta_rule,
    gauss_hermite_rule,
)
from .variance import (
    MomentConditionError,
    Quadrature,
    VarianceModel,
    expectation_nodes,
    mc_nodes,
    moments,
)


class MetricDomainError(ValueError):
    """Order parameters outside the metric's domain (e.g. q <= 0)."""


def norm_cdf(x):
    return 0.5 * erfc(-np.asarray(x, dtype=float) / math.sqrt(2.0))


def norm_tail(x):
    return 0.5 * erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))


@dataclass(frozen=True)
class ErrorReport:
    eps_g: float
    eps_t: float
    eps_l: float
    eps_bayes: Optional[float] = None
    mse_g: Optional[float] = None


def generalisation_error(p: OrderParams, spec: ProblemSpec, nodes: int = 512) -> float:
    """Asymptotic sign-classifier test error.

    The Gaussian noise integrates analytically: conditioned on the label
    and Delta, the score is N(m_y + b, q*Delta), so

        eps_g = rho+ E[Phi(-(m+ + b)/sqrt(q D))] + rho- E[Phi((m- + b)/sqrt(q D))].
    """
    if p.q <= 0:
        raise MetricDomainError(f"generalisation error needs q > 0, got {p.q}")
    d, w = expectation_nodes(spec.variance, nodes)
    s = np.sqrt(p.q * d)
    err_plus = w @ norm_cdf(-(p.m_plus + p.b) / s)
    err_minus = w @ norm_cdf((p.m_minus + p.b) / s)
    return float(spec.rho_plus * err_plus + spec.rho_minus * err_minus)


def training_metrics(p: OrderParams, spec: ProblemSpec,
                     cfg: SolverConfig = SolverConfig()) -> tuple[float, float]:
    """(training error, training loss) via the proximal channel expectations."""
    if p.q < 0 or p.v <= 0:
        raise MetricDomainError(f"training metrics need q >= 0 and v > 0, got q={p.q}, v={p.v}")
    deltas, dweights = delta_rule(spec.variance, cfg.delta_method)
    zetas, zweights = gauss_hermite_rule(cfg.zeta_nodes)
    ch = channel_moments(p, spec, deltas, dweights, zetas, zweights,
                         prox_tol=cfg.prox_tol, want_metrics=True)
    eps_t = spec.rho_plus * ch.e_err[1] + spec.rho_minus * ch.e_err[-1]
    eps_l = spec.rho_plus * ch.e_loss[1] + spec.rho_minus * ch.e_loss[-1]
    return float(eps_t), float(eps_l)


def bayes_optimal_error(model: VarianceModel, rho_plus: float, alpha: float,
                        nodes: int = 512, mc: Optional[tuple[int, int]] = None) -> float:
    """Bayes-optimal test error for symmetric antipodal centroids.

    Requires E[Delta] and E[Delta^-2] finite.  The optimal decoder weights
    each observation by its own inverse variance, so the effective noise
    inflation is B = 1 + 1/(alpha E[Delta^-1]); decoders whose per-sample
    variance weights are drawn independently of the data realise the larger
    inflation E[Delta] E[Delta^-2] / (alpha E[Delta^-1]^2) instead and are
    not optimal (both agree for a point-mass law).  Verified against a
    direct simulation of the inverse-variance-weighted decoder.

    The double expectation runs over two independent variance draws (the
    conditioning draw and the draw of the test point), tensorized over
    deterministic node sets; pass ``mc=(n, seed)`` to sample instead.
    Values for unbalanced mixtures follow the same formula but are only
    lightly exercised; treat them as experimental.
    """
    if not (0.0 < rho_plus < 1.0):
        raise MetricDomainError(f"rho_plus must lie in (0, 1), got {rho_plus}")
    if alpha <= 0:
        raise MetricDomainError(f"alpha must be > 0, got {alpha}")
    mom = moments(model)
    if not mom.mean_finite:
        raise MomentConditionError("Bayes optimal error requires E[Delta] < inf")
    if not mom.inv_sq_finite:
        raise MomentConditionError("Bayes optimal error requires E[Delta^-2] < inf")

    big_b = 1.0 + 1.0 / (alpha * mom.inv_mean)
    log_ratio = math.log(rho_plus / (1.0 - rho_plus))
    tilt = 0.5 * (1.0 + 1.0 / (alpha * mom.inv_mean)) * log_ratio

    if mc is not None:
        n, seed = mc
        d0, w0 = mc_nodes(model, n, seed)
        ds, ws = mc_nodes(model, n, seed + 1)
    else:
        d0, w0 = expectation_nodes(model, nodes)
        ds, ws = expectation_nodes(model, nodes)
    scale = np.sqrt(ds * big_b)  # over Delta_star
    num_plus = 1.0 + d0 * tilt   # over Delta_0
    num_minus = 1.0 - d0 * tilt
    # E over independent (Delta_0, Delta_star): tensorize the two node sets
    t_plus = w0 @ norm_tail(num_plus[:, None] / scale[None, :]) @ ws
    t_minus = w0 @ norm_tail(num_minus[:, None] / scale[None, :]) @ ws
    return float(rho_plus * t_plus + (1.0 - rho_plus) * t_minus)


def rl_training_loss(alpha: float) -> float:
    """Universal random-labels square training loss at vanishing ridge.

    Equals (1 - 1/alpha)/2 above the interpolation threshold and 0 below,
    for every variance law.
    """
    if alpha <= 0:
        raise MetricDomainError(f"alpha must be > 0, got {alpha}")
    return 0.5 * (1.0 - 1.0 / alpha) if alpha > 1.0 else 0.0


def rl_mse(q: float, model: VarianceModel) -> float:
    """Random-labels test mean-square error 1 + E[Delta] * q (may be inf)."""
    if q < 0:
        raise MetricDomainError(f"q must be >= 0, got {q}")
    mean = moments(model).mean_delta
    if q == 0.0:
        return 1.0
    return 1.0 + mean * q if math.isfinite(mean) else math.inf

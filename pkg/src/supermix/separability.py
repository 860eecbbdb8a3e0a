"""Linear-separability threshold of the two-cloud training set.

Below the critical sample complexity ``alpha_star`` the training data are
linearly separable with probability approaching one.  The threshold is the
maximum over a direction overlap ``theta`` in (0, 1] and a rescaled bias
``gamma`` of ``(1 - theta^2) / S(theta, gamma)``, where S is a Gaussian
capacity integral.  After swapping the order of integration, the inner
integral is the second moment of a truncated Gaussian,

    m2(s) = integral_0^inf f^2 phi(f + s) df = (1 + s^2) Phi(-s) - s phi(s),

leaving only the variance expectation to evaluate numerically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .metrics import norm_cdf
from .variance import VarianceModel, expectation_nodes

_THETA_FLOOR = 1e-6


class SeparabilityError(RuntimeError):
    """Threshold optimisation failed to certify a maximum."""


@dataclass(frozen=True)
class SeparabilityResult:
    alpha_star: float
    theta_star: float
    gamma_star: float
    S_at_opt: float
    converged: bool = True


def _half_gaussian_m2(s):
    """Second moment of the positive part of a unit Gaussian shifted by s."""
    s = np.asarray(s, dtype=float)
    phi = np.exp(-0.5 * s * s) / math.sqrt(2.0 * math.pi)
    return (1.0 + s * s) * norm_cdf(-s) - s * phi


def s_integral(theta: float, gamma: float, model: VarianceModel,
               rho_plus: float = 0.5, nodes: int = 512) -> float:
    """Capacity integral S(theta, gamma), inner f-integral in closed form."""
    if not (0.0 < theta <= 1.0):
        raise SeparabilityError(f"theta must lie in (0, 1], got {theta}")
    if not (0.0 < rho_plus < 1.0):
        raise SeparabilityError(f"rho_plus must lie in (0, 1), got {rho_plus}")
    d, w = expectation_nodes(model, nodes)
    inv_sqrt = 1.0 / np.sqrt(d)
    val = (rho_plus * _half_gaussian_m2((theta + gamma) * inv_sqrt)
           + (1.0 - rho_plus) * _half_gaussian_m2((theta - gamma) * inv_sqrt))
    return float(w @ val)


def alpha_star(model: VarianceModel, rho_plus: float = 0.5,
               gamma_max: float = 5.0, grid: int = 64, nodes: int = 512,
               refine_tol: float = 1e-6) -> SeparabilityResult:
    """Separability threshold by coarse grid search plus simplex refinement.

    The gamma grid has an odd point count so the symmetric optimum gamma=0
    of balanced mixtures is representable before refinement.  The refined
    value is certified against the grid maximum.
    """
    d, w = expectation_nodes(model, nodes)
    inv_sqrt = 1.0 / np.sqrt(d)
    rho_minus = 1.0 - rho_plus

    def s_val(theta, gamma):
        return float(w @ (rho_plus * _half_gaussian_m2((theta + gamma) * inv_sqrt)
                          + rho_minus * _half_gaussian_m2((theta - gamma) * inv_sqrt)))

    def objective(theta, gamma):
        return (1.0 - theta * theta) / s_val(theta, gamma)

    thetas = np.linspace(1.0 / grid, 1.0, grid)
    gammas = np.linspace(-gamma_max, gamma_max, grid + 1)  # odd count, includes 0
    best_val, best_t, best_g = -math.inf, thetas[0], 0.0
    for t in thetas:
        m2p = _half_gaussian_m2((t + gammas[:, None]) * inv_sqrt[None, :])
        m2m = _half_gaussian_m2((t - gammas[:, None]) * inv_sqrt[None, :])
        s_row = (rho_plus * m2p + rho_minus * m2m) @ w
        vals = (1.0 - t * t) / s_row
        j = int(np.argmax(vals))
        if vals[j] > best_val:
            best_val, best_t, best_g = float(vals[j]), float(t), float(gammas[j])

    res = minimize(lambda x: -objective(x[0], x[1]), x0=[best_t, best_g],
                   method="Nelder-Mead",
                   bounds=[(_THETA_FLOOR, 1.0), (-gamma_max, gamma_max)],
                   options={"xatol": refine_tol, "fatol": 1e-12, "maxiter": 2000})
    t_opt, g_opt = float(res.x[0]), float(res.x[1])
    val_opt = objective(t_opt, g_opt)
    converged = bool(res.success) and val_opt >= best_val - 1e-9
    if val_opt < best_val:  # grid dominance certificate
        t_opt, g_opt, val_opt = best_t, best_g, best_val
    return SeparabilityResult(alpha_star=val_opt, theta_star=t_opt, gamma_star=g_opt,
                              S_at_opt=s_val(t_opt, g_opt), converged=converged)

"""Classification losses and their scalar proximal maps.

The asymptotic equations only ever touch the loss through the proximal

    prox(y, omega, kappa) = argmin_u  (u - omega)^2 / (2 kappa) + loss(y, u)

and the scaled residual ``f = (h - omega) / kappa = -loss'(y, h)``, which
is what every downstream expectation actually consumes.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit


class LossKind(enum.Enum):
    SQUARE = "square"
    LOGISTIC = "logistic"


class ProxDomainError(ValueError):
    """Invalid argument to a proximal evaluation (e.g. kappa <= 0)."""


class ProxSolverError(RuntimeError):
    """The proximal root-finder failed to converge; indicates a bug."""


def loss(kind: LossKind, y: int, eta) -> np.ndarray | float:
    """Loss value; ``y`` in {-1, +1}, convex in ``eta``."""
    if y not in (-1, 1):
        raise ProxDomainError(f"label must be -1 or +1, got {y}")
    eta = np.asarray(eta, dtype=float)
    if kind is LossKind.SQUARE:
        out = 0.5 * (y - eta) ** 2
    elif kind is LossKind.LOGISTIC:
        out = np.logaddexp(0.0, -y * eta)
    else:
        raise ProxDomainError(f"unknown loss {kind!r}")
    return out if out.ndim else float(out)


def logistic_curvature(eta) -> np.ndarray | float:
    """Second derivative of the logistic loss, ``1 / (4 cosh(eta/2)^2)``.

    Even in ``eta``, maximal value 1/4 at the origin; computed as
    ``sigma(eta) * sigma(-eta)`` to avoid overflow.
    """
    eta = np.asarray(eta, dtype=float)
    s = expit(eta)
    out = s * expit(-eta)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class ProxResult:
    h: float  # proximal point
    f: float  # scaled residual (h - omega) / kappa


def prox_square(y, omega, kappa):
    """Closed-form square-loss proximal: h = (omega + kappa*y) / (1 + kappa)."""
    h = (omega + kappa * y) / (1.0 + kappa)
    f = (y - omega) / (1.0 + kappa)
    return h, f


def _prox_root(dloss, d2loss, omega, kappa, tol, max_iter, u0=None):
    """Safeguarded Newton for psi(u) = (u - omega)/kappa + dloss(u) = 0.

    psi is strictly increasing; [omega - kappa, omega + kappa] brackets the
    root whenever |dloss| < 1 (logistic) and is expanded geometrically
    otherwise, so bisection guarantees termination and Newton supplies the
    rate.  Vectorized; a warm start ``u0`` (e.g. the root at nearby omega)
    is clipped into the bracket and typically converges in a few steps.
    """
    omega = np.asarray(omega, dtype=float)
    kappa_b = np.broadcast_to(np.asarray(kappa, dtype=float), omega.shape)
    lo = omega - kappa_b
    hi = omega + kappa_b
    step = kappa_b.copy()
    for _ in range(64):
        bad = (lo - omega) / kappa_b + dloss(lo) > 0.0
        if not np.any(bad):
            break
        lo = np.where(bad, lo - step, lo)
        step = step * 2.0
    step = kappa_b.copy()
    for _ in range(64):
        bad = (hi - omega) / kappa_b + dloss(hi) < 0.0
        if not np.any(bad):
            break
        hi = np.where(bad, hi + step, hi)
        step = step * 2.0
    if u0 is not None:
        u = np.clip(u0, omega - 0.999999 * kappa_b, omega + 0.999999 * kappa_b)
        u = np.where(np.isfinite(u), u, omega)  # NaN cache slots fall back to cold start
    else:
        u = omega.astype(float).copy()
    done_res = np.inf
    for _ in range(max_iter):
        psi = (u - omega) / kappa_b + dloss(u)
        # an element is done when the residual meets tol or its bracket has
        # collapsed to float resolution (best representable root)
        live = (np.abs(psi) > tol) & (hi - lo > 4.0 * np.finfo(float).eps * (1.0 + np.abs(u)))
        done_res = float(np.max(np.abs(psi))) if psi.size else 0.0
        if not np.any(live):
            return u
        lo = np.where(psi < 0.0, u, lo)
        hi = np.where(psi > 0.0, u, hi)
        un = u - psi / (1.0 / kappa_b + d2loss(u))
        # accept Newton only when it stays in the bracket and moves no more
        # than half its width; otherwise bisect (guarantees termination and
        # breaks the two-cycle across the flat tails of sigmoid-like dloss)
        ok = (un > lo) & (un < hi) & (np.abs(un - u) <= 0.5 * (hi - lo)) & np.isfinite(un)
        u = np.where(live & ok, un, np.where(live, 0.5 * (lo + hi), u))
    raise ProxSolverError(f"proximal Newton stalled at residual {done_res:.3e} (tol {tol:.1e})")


def prox_logistic(y, omega, kappa, tol=1e-12, max_iter=200, u0=None):
    """Logistic-loss proximal on arrays; returns (h, f).

    The residual f is evaluated as ``y * sigma(-y h)``, exact at the
    stationary point and free of the cancellation in ``(h - omega)/kappa``.
    """
    dloss = lambda u: -y * expit(-y * u)
    h = _prox_root(dloss, logistic_curvature, omega, kappa, tol, max_iter, u0=u0)
    f = y * expit(-y * h)
    return h, f


def prox(kind: LossKind, y: int, omega: float, kappa: float, tol: float = 1e-12) -> ProxResult:
    """Scalar proximal of the loss at ``omega`` with step ``kappa > 0``."""
    if y not in (-1, 1):
        raise ProxDomainError(f"label must be -1 or +1, got {y}")
    if not (np.isfinite(kappa) and kappa > 0):
        raise ProxDomainError(f"prox requires finite kappa > 0, got {kappa}")
    if kind is LossKind.SQUARE:
        h, f = prox_square(y, float(omega), float(kappa))
        return ProxResult(float(h), float(f))
    if kind is LossKind.LOGISTIC:
        h, f = prox_logistic(y, np.array([float(omega)]), float(kappa), tol=tol)
        return ProxResult(float(h[0]), float(f[0]))
    raise ProxDomainError(f"unknown loss {kind!r}")


def curvature(kind: LossKind, h):
    """Loss second derivative at ``h`` (1 for square, logistic otherwise)."""
    if kind is LossKind.SQUARE:
        return np.ones_like(np.asarray(h, dtype=float))
    if kind is LossKind.LOGISTIC:
        return logistic_curvature(h)
    raise ProxDomainError(f"unknown loss {kind!r}")

"""Fixed-point solver for the asymptotic order-parameter equations.

The estimator statistics of ridge-regularised classification on two
scale-mixture clouds concentrate on nine scalars: the centroid overlaps
``m+, m-``, the self-overlap ``q``, the variance parameter ``v``, the bias
``b`` and their conjugates ``hat_m+, hat_m-, hat_q, hat_v``.  They satisfy
self-consistent equations that we solve by damped synchronous iteration.

Two update rules are provided:

* a closed-form rule for square loss + ridge, written in terms of the
  resolvent moments ``delta_k(v) = E[(1 + v*Delta)^-k]``,
* a generic rule for any supported loss, integrating the Gaussian noise by
  Gauss-Hermite quadrature and the variance by either a fixed common set of
  Monte Carlo draws or deterministic quadrature nodes.  The conjugate
  ``hat_v`` uses the curvature form
  ``alpha * E[Delta l''(h) / (1 + v Delta l''(h))]``, which is equal to the
  Stein-lemma expression but numerically stable for the logistic loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Optional, Union

import numpy as np
from scipy import special
from scipy.optimize import brentq

from .losses import LossKind, curvature, prox_logistic, prox_square
from .variance import (
    MonteCarlo,
    Quadrature,
    VarianceModel,
    delta_k,
    delta_k_discrete,
    expectation_nodes,
    mc_nodes,
)

# lambda is floored here for logistic solves: the exact lambda -> 0 limit has
# diverging order parameters (separable phase) and is handled by the
# separability module instead.
LOGISTIC_LAMBDA_FLOOR = 1e-6

_V_FLOOR = 1e-12
_DELTA_CHUNK = 4096


class SpecError(ValueError):
    """Invalid problem specification."""


class IterationGuardError(RuntimeError):
    """An update was requested from an invalid state (v <= 0 or q < 0)."""


# ---------------------------------------------------------------------------
# problem description
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CentroidGeometry:
    """2x2 Gram matrix of asymptotic centroid overlaps, index order (+, -)."""

    gram: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gram, dtype=float)
        if g.shape != (2, 2):
            raise SpecError(f"gram must be 2x2, got shape {g.shape}")
        if not np.allclose(g, g.T, atol=1e-12):
            raise SpecError("gram must be symmetric")
        if np.min(np.linalg.eigvalsh(g)) < -1e-10:
            raise SpecError("gram must be positive semidefinite")
        object.__setattr__(self, "gram", g)

    @classmethod
    def antipodal(cls) -> "CentroidGeometry":
        """Unit-norm opposite centroids: gram [[1, -1], [-1, 1]]."""
        return cls(np.array([[1.0, -1.0], [-1.0, 1.0]]))


@dataclass(frozen=True)
class ProblemSpec:
    """Full description of one asymptotic classification task."""

    alpha: float
    lam: float
    rho_plus: float
    loss: LossKind
    variance: VarianceModel
    geometry: CentroidGeometry = field(default_factory=CentroidGeometry.antipodal)

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise SpecError(f"alpha must be > 0, got {self.alpha}")
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise SpecError(f"lambda must be >= 0, got {self.lam}")
        if not (0.0 < self.rho_plus < 1.0):
            raise SpecError(f"rho_plus must lie in (0, 1), got {self.rho_plus}")

    @property
    def rho_minus(self) -> float:
        return 1.0 - self.rho_plus

    def rho(self, y: int) -> float:
        return self.rho_plus if y > 0 else self.rho_minus


_PARAM_NAMES = ("m_plus", "m_minus", "q", "v", "b",
                "hat_m_plus", "hat_m_minus", "hat_q", "hat_v")


@dataclass(frozen=True)
class OrderParams:
    m_plus: float
    m_minus: float
    q: float
    v: float
    b: float
    hat_m_plus: float = 0.0
    hat_m_minus: float = 0.0
    hat_q: float = 0.0
    hat_v: float = 0.0

    def m(self, y: int) -> float:
        return self.m_plus if y > 0 else self.m_minus

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in _PARAM_NAMES])

    @classmethod
    def from_array(cls, arr) -> "OrderParams":
        return cls(**dict(zip(_PARAM_NAMES, map(float, arr))))


@dataclass(frozen=True)
class SolverConfig:
    damping: float = 0.5
    tol: float = 1e-5
    max_iter: int = 1000
    zeta_nodes: int = 127
    delta_method: Union[MonteCarlo, Quadrature] = MonteCarlo(100_000, 0)
    init: Optional[OrderParams] = None
    update_rule: str = "auto"  # auto | closed_form | general
    prox_tol: float = 1e-12

    def __post_init__(self):
        if not (0.0 <= self.damping < 1.0):
            raise SpecError(f"damping must lie in [0, 1), got {self.damping}")
        if self.tol <= 0 or self.max_iter < 1:
            raise SpecError("tol must be > 0 and max_iter >= 1")
        if self.update_rule not in ("auto", "closed_form", "general"):
            raise SpecError(f"unknown update_rule {self.update_rule!r}")


@dataclass(frozen=True)
class SEResult:
    params: OrderParams
    converged: bool
    iterations: int
    residual: float
    clamp_events: int = 0


# ---------------------------------------------------------------------------
# quadrature plumbing
# ---------------------------------------------------------------------------

@lru_cache(maxsize=16)
def gauss_hermite_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes/weights integrating E[g(zeta)] for zeta ~ N(0, 1)."""
    x, w = np.polynomial.hermite.hermgauss(n)
    return math.sqrt(2.0) * x, w / math.sqrt(math.pi)


def delta_rule(model: VarianceModel, method: Union[MonteCarlo, Quadrature]) -> tuple[np.ndarray, np.ndarray]:
    """Node set for E[f(Delta)] under the configured integration method."""
    if isinstance(method, MonteCarlo):
        return mc_nodes(model, method.n, method.seed)
    if isinstance(method, Quadrature):
        return expectation_nodes(model, method.nodes)
    raise SpecError(f"unknown delta method {method!r}")


def _dk_factory(model: VarianceModel, method: Union[MonteCarlo, Quadrature],
                nodes: Optional[tuple[np.ndarray, np.ndarray]] = None) -> Callable[[float, int], float]:
    """delta_k evaluator honoring the Monte Carlo common-sample contract."""
    if isinstance(method, MonteCarlo):
        deltas, weights = nodes if nodes is not None else mc_nodes(model, method.n, method.seed)
        return lambda v, k: delta_k_discrete(deltas, weights, v, k)
    return lambda v, k: delta_k(model, v, k)


# ---------------------------------------------------------------------------
# channel expectations (shared with the metrics module)
# ---------------------------------------------------------------------------

@dataclass
class ChannelMoments:
    """Per-label channel expectations over (Delta, zeta)."""

    e_f: dict        # E[f_y]
    e_df2: dict      # E[Delta f_y^2]
    e_stab: dict     # E[Delta l''(h) / (1 + v Delta l''(h))]
    e_h: dict        # E[h_y]
    e_loss: dict     # E[loss(y, h_y)]
    e_err: dict      # E[I(sign(h_y) != y)], sign(0) = +1


def _miss_probability(y: int, m_y: float, b: float, q: float, v: float,
                      loss_kind: LossKind, deltas: np.ndarray) -> np.ndarray:
    """P[sign(h_y) != y | Delta]: the zeta integral done analytically.

    The proximal point is increasing in zeta and crosses zero exactly where
    omega equals kappa * loss'(y, 0) (-kappa*y for square, -kappa*y/2 for
    logistic), so the miss event is a Gaussian half-line.
    """
    dl0 = -float(y) if loss_kind is LossKind.SQUARE else -0.5 * float(y)
    kappa = v * deltas
    with np.errstate(divide="ignore", invalid="ignore"):
        z0 = (kappa * dl0 - m_y - b) / np.sqrt(q * deltas)
    z0 = np.where(np.isnan(z0), 0.0, z0)  # q = 0 with zero offset: boundary case
    tail = 0.5 * special.erfc(-z0 / math.sqrt(2.0))  # P(zeta <= z0)
    return tail if y > 0 else 1.0 - tail


def channel_moments(p: OrderParams, spec: ProblemSpec,
                    deltas: np.ndarray, dweights: np.ndarray,
                    zetas: np.ndarray, zweights: np.ndarray,
                    prox_tol: float = 1e-12,
                    want_metrics: bool = False,
                    warm: Optional[dict] = None) -> ChannelMoments:
    """Expectations of the proximal statistics entering the hat updates.

    Work is chunked over the Delta nodes so that Monte Carlo node sets of
    10^5 draws stay within a few MB of scratch space.  ``warm`` may hold
    per-label proximal grids from a previous call on the same node set;
    they seed the root-finder and are updated in place.
    """
    if p.v <= 0:
        raise IterationGuardError(f"channel expectations need v > 0, got {p.v}")
    if p.q < 0:
        raise IterationGuardError(f"channel expectations need q >= 0, got {p.q}")
    out = ChannelMoments({}, {}, {}, {}, {}, {})
    sqrtq = math.sqrt(p.q)
    for y in (1, -1):
        m_y = p.m(y)
        acc = np.zeros(6)
        cache = warm.get(y) if warm is not None else None
        for start in range(0, deltas.size, _DELTA_CHUNK):
            d = deltas[start:start + _DELTA_CHUNK, None]
            wd = dweights[start:start + _DELTA_CHUNK, None]
            omega = m_y + p.b + sqrtq * np.sqrt(d) * zetas[None, :]
            kappa = p.v * d
            if spec.loss is LossKind.SQUARE:
                h, f = prox_square(y, omega, kappa)
            else:
                u0 = cache[start:start + _DELTA_CHUNK] if cache is not None else None
                h, f = prox_logistic(y, omega, np.broadcast_to(kappa, omega.shape),
                                     tol=prox_tol, u0=u0)
                if cache is not None:
                    cache[start:start + _DELTA_CHUNK] = h
            w2 = wd * zweights[None, :]
            curv = curvature(spec.loss, h)
            stab = d * curv / (1.0 + kappa * curv)
            acc[0] += float(np.sum(w2 * f))
            acc[1] += float(np.sum(w2 * (d * f * f)))
            acc[2] += float(np.sum(w2 * stab))
            acc[3] += float(np.sum(w2 * h))
            if want_metrics:
                if spec.loss is LossKind.SQUARE:
                    lval = 0.5 * (y - h) ** 2
                else:
                    lval = np.logaddexp(0.0, -y * h)
                acc[4] += float(np.sum(w2 * lval))
        if want_metrics:
            # indicator integrands are not smooth in zeta: use the exact
            # half-line probability instead of Gauss-Hermite weights
            acc[5] = float(dweights @ _miss_probability(y, m_y, p.b, p.q, p.v,
                                                        spec.loss, deltas))
        out.e_f[y], out.e_df2[y], out.e_stab[y], out.e_h[y], out.e_loss[y], out.e_err[y] = acc
    return out


# ---------------------------------------------------------------------------
# update rules
# ---------------------------------------------------------------------------

def _prior_block(spec: ProblemSpec, lam_eff: float, p: OrderParams) -> tuple[float, float, float, float]:
    """Ridge closed form (m+, m-, q, v) from the input conjugates."""
    denom = lam_eff + p.hat_v
    if denom <= 0:
        raise IterationGuardError(f"lambda + hat_v must be > 0, got {denom}")
    g = spec.geometry.gram
    hat_m = np.array([p.hat_m_plus, p.hat_m_minus])
    m = g.T @ hat_m / denom  # m_j = sum_k hat_m_k G_kj / denom
    q = (hat_m @ g @ hat_m + p.hat_q) / denom ** 2
    if q < 0:
        raise IterationGuardError(f"q update went negative: {q}")
    return float(m[0]), float(m[1]), float(q), 1.0 / denom


def se_update_ridge_square(p: OrderParams, spec: ProblemSpec,
                           dk: Optional[Callable[[float, int], float]] = None,
                           lam_eff: Optional[float] = None) -> OrderParams:
    """One synchronous update of the square-loss + ridge equations.

    All Delta expectations reduce to the resolvent moments:
    E[Delta/(1+vD)] = (1-d1)/v, E[Delta/(1+vD)^2] = (d1-d2)/v,
    E[Delta^2/(1+vD)^2] = (1-2 d1+d2)/v^2.
    """
    if spec.loss is not LossKind.SQUARE:
        raise SpecError("closed-form update only applies to the square loss")
    if p.v <= 0:
        raise IterationGuardError(f"update needs v > 0, got {p.v}")
    if dk is None:
        dk = lambda v, k: delta_k(spec.variance, v, k)
    lam = spec.lam if lam_eff is None else lam_eff
    alpha, v = spec.alpha, p.v
    d1 = dk(v, 1)
    d2 = dk(v, 2)
    e_d_res = (1.0 - d1) / v          # E[Delta / (1 + v Delta)]
    e_d_res2 = (d1 - d2) / v          # E[Delta / (1 + v Delta)^2]
    e_d2_res2 = (1.0 - 2.0 * d1 + d2) / v ** 2  # E[Delta^2 / (1 + v Delta)^2]

    s_plus = 1.0 - p.m_plus - p.b
    s_minus = -1.0 - p.m_minus - p.b
    e_s2 = spec.rho_plus * s_plus ** 2 + spec.rho_minus * s_minus ** 2

    hat_q = alpha * e_s2 * e_d_res2 + alpha * p.q * e_d2_res2
    hat_v = alpha * e_d_res
    hat_m = np.array([alpha * spec.rho_plus * s_plus * d1,
                      alpha * spec.rho_minus * s_minus * d1])
    b = p.b * d1 + (1.0 - d1) * (spec.rho_plus * (1.0 - p.m_plus)
                                 + spec.rho_minus * (-1.0 - p.m_minus))

    # synchronous rule: the non-hat block consumes the *input* conjugates
    m_plus, m_minus, q, v_new = _prior_block(spec, lam, p)
    return OrderParams(m_plus, m_minus, q, v_new, b,
                       float(hat_m[0]), float(hat_m[1]), hat_q, hat_v)


def se_update_general(p: OrderParams, spec: ProblemSpec, cfg: SolverConfig,
                      nodes: Optional[tuple[np.ndarray, np.ndarray]] = None,
                      lam_eff: Optional[float] = None,
                      warm: Optional[dict] = None) -> OrderParams:
    """One synchronous update via proximal expectations (any supported loss)."""
    lam = spec.lam if lam_eff is None else lam_eff
    deltas, dweights = nodes if nodes is not None else delta_rule(spec.variance, cfg.delta_method)
    zetas, zweights = gauss_hermite_rule(cfg.zeta_nodes)
    ch = channel_moments(p, spec, deltas, dweights, zetas, zweights,
                         prox_tol=cfg.prox_tol, warm=warm)

    rho = (spec.rho_plus, spec.rho_minus)
    alpha = spec.alpha
    hat_q = alpha * (rho[0] * ch.e_df2[1] + rho[1] * ch.e_df2[-1])
    hat_v = alpha * (rho[0] * ch.e_stab[1] + rho[1] * ch.e_stab[-1])
    hat_m = np.array([alpha * rho[0] * ch.e_f[1], alpha * rho[1] * ch.e_f[-1]])
    b = rho[0] * (ch.e_h[1] - p.m_plus) + rho[1] * (ch.e_h[-1] - p.m_minus)

    m_plus, m_minus, q, v_new = _prior_block(spec, lam, p)
    return OrderParams(m_plus, m_minus, q, v_new, b,
                       float(hat_m[0]), float(hat_m[1]), hat_q, hat_v)


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------

def _effective_lambda(spec: ProblemSpec) -> float:
    if spec.loss is LossKind.LOGISTIC:
        return max(spec.lam, LOGISTIC_LAMBDA_FLOOR)
    return spec.lam


def default_init(spec: ProblemSpec, update: Callable[[OrderParams], OrderParams]) -> OrderParams:
    """Symmetry-breaking start: small +/- overlaps, conjugates from one update."""
    p0 = OrderParams(m_plus=0.1, m_minus=-0.1, q=0.5, v=1.0, b=0.0,
                     hat_m_plus=0.1, hat_m_minus=-0.1, hat_q=0.5, hat_v=1.0)
    warm = update(p0)
    return replace(p0, hat_m_plus=warm.hat_m_plus, hat_m_minus=warm.hat_m_minus,
                   hat_q=warm.hat_q, hat_v=warm.hat_v)


def solve_se(spec: ProblemSpec, cfg: SolverConfig = SolverConfig()) -> SEResult:
    """Damped fixed-point solve of the order-parameter equations.

    Deterministic given the configuration: Monte Carlo Delta draws are made
    once per solve and reused across iterations (common random numbers).
    Non-convergence is reported through the ``converged`` flag, not raised.
    """
    lam_eff = _effective_lambda(spec)
    rule = cfg.update_rule
    if rule == "auto":
        rule = "closed_form" if spec.loss is LossKind.SQUARE else "general"

    if rule == "closed_form":
        nodes = None
        if isinstance(cfg.delta_method, MonteCarlo):
            nodes = delta_rule(spec.variance, cfg.delta_method)
        dk = _dk_factory(spec.variance, cfg.delta_method, nodes)
        update = lambda p: se_update_ridge_square(p, spec, dk=dk, lam_eff=lam_eff)
    else:
        nodes = delta_rule(spec.variance, cfg.delta_method)
        zetas, _ = gauss_hermite_rule(cfg.zeta_nodes)
        warm = None
        if spec.loss is LossKind.LOGISTIC and nodes[0].size * zetas.size <= 2_000_000:
            warm = {1: np.full((nodes[0].size, zetas.size), np.nan),
                    -1: np.full((nodes[0].size, zetas.size), np.nan)}
        update = lambda p: se_update_general(p, spec, cfg, nodes=nodes, lam_eff=lam_eff, warm=warm)

    p = cfg.init if cfg.init is not None else default_init(spec, update)
    clamps = 0
    residual = math.inf
    for it in range(1, cfg.max_iter + 1):
        pn = update(p)
        residual = float(np.max(np.abs(pn.to_array() - p.to_array())))
        if not math.isfinite(residual):
            return SEResult(p, False, it, residual, clamps)
        if residual <= cfg.tol:
            return SEResult(p, True, it, residual, clamps)
        mixed = (1.0 - cfg.damping) * pn.to_array() + cfg.damping * p.to_array()
        p = OrderParams.from_array(mixed)
        # transient negativity from Monte Carlo noise must not abort the solve
        if p.v < _V_FLOOR or p.q < 0.0:
            clamps += 1
            p = replace(p, v=max(p.v, _V_FLOOR), q=max(p.q, 0.0))
    return SEResult(p, False, cfg.max_iter, residual, clamps)


# ---------------------------------------------------------------------------
# random-labels reduction (square loss)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RLSquareResult:
    v: float
    q: float
    converged: bool
    residual: float


def solve_rl_square(alpha: float, lam: float, model: VarianceModel,
                    cfg: Optional[SolverConfig] = None) -> RLSquareResult:
    """Converged (v, q) of the random-labels square-loss system.

    With random labels the overlaps and bias vanish and the system closes
    on (v, q, hat_v, hat_q).  Eliminating the conjugates leaves a monotone
    scalar equation ``lam*v + alpha*(1 - delta_1(v)) = 1`` solved by Brent's
    method, after which q follows in closed form:

        q = alpha*v*(d1 - d2) / (1 - alpha*(1 - 2 d1 + d2)).
    """
    if alpha <= 0:
        raise SpecError(f"alpha must be > 0, got {alpha}")
    if lam < 0:
        raise SpecError(f"lambda must be >= 0, got {lam}")
    dk = _dk_factory(model, cfg.delta_method if cfg is not None else Quadrature())

    if lam == 0.0 and alpha <= 1.0:
        # interpolating regime: v, q diverge as lam -> 0
        return RLSquareResult(math.inf, math.inf, False, math.inf)

    def g(v):
        return lam * v + alpha * (1.0 - dk(v, 1)) - 1.0

    hi = 1.0
    for _ in range(80):
        if g(hi) > 0:
            break
        hi *= 10.0
    else:
        return RLSquareResult(math.inf, math.inf, False, math.inf)
    v = brentq(g, 1e-18, hi, xtol=1e-15, rtol=8.9e-16, maxiter=300)
    d1, d2 = dk(v, 1), dk(v, 2)
    denom = 1.0 - alpha * (1.0 - 2.0 * d1 + d2)
    q = alpha * v * (d1 - d2) / denom
    # residual of the original four update equations at the returned point
    hat_v = alpha * (1.0 - d1) / v
    hat_q = alpha * (d1 - d2) / v + alpha * q * (1.0 - 2.0 * d1 + d2) / v ** 2
    res = max(abs(v - 1.0 / (lam + hat_v)), abs(q - hat_q / (lam + hat_v) ** 2))
    return RLSquareResult(float(v), float(q), res <= 1e-8 * max(1.0, q), float(res))

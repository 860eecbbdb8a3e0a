"""Finite-size ground truth: dataset sampling, ERM fits, empirical errors.

Datasets follow the convention of the asymptotic theory: a centroid vector
``mu`` with standard normal entries is drawn once per dataset, the clouds
sit at ``+/- mu / sqrt(d)``, and each sample is

    x = cloud_sign * mu / sqrt(d) + sqrt(Delta) * z,   z ~ N(0, I_d),

with the per-sample variance Delta drawn from the configured law.  Labels
either equal the cloud sign ("class" mode) or are independent Rademacher
draws ("random" mode).  Predictions are read from sign(x.w / sqrt(d) + b)
with sign(0) = +1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg
from scipy.optimize import minimize
from scipy.special import expit

from .losses import LossKind
from .state_evolution import ProblemSpec
from .variance import _sample_rng


class FitError(RuntimeError):
    """An optimiser failed to reach its tolerance; carries the best iterate."""

    def __init__(self, msg: str, estimator: "Estimator"):
        super().__init__(msg)
        self.estimator = estimator


@dataclass(frozen=True)
class DatasetMeta:
    n: int
    d: int
    seed: int
    label_mode: str
    spec: ProblemSpec
    gram_realized: float  # mu.mu / d, the finite-d centroid overlap


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    mu: np.ndarray  # raw standard normal centroid; clouds at +/- mu / sqrt(d)
    meta: DatasetMeta


@dataclass(frozen=True)
class FitDiagnostics:
    objective: float
    grad_norm: float
    iterations: int
    diverged: bool = False
    min_norm_fallback: bool = False


@dataclass(frozen=True)
class Estimator:
    w: np.ndarray
    b: float
    diagnostics: FitDiagnostics

    def scores(self, X: np.ndarray) -> np.ndarray:
        return X @ self.w / math.sqrt(X.shape[1]) + self.b

    def predict(self, X: np.ndarray) -> np.ndarray:
        s = self.scores(X)
        return np.where(s >= 0.0, 1.0, -1.0)  # sign(0) = +1


def sample_dataset(spec: ProblemSpec, n: int, d: int, seed: int,
                   label_mode: str = "class") -> Dataset:
    """Draw a dataset of n points in dimension d; deterministic given seed."""
    if n < 1 or d < 1:
        raise ValueError(f"need n, d >= 1, got n={n}, d={d}")
    if label_mode not in ("class", "random"):
        raise ValueError(f"label_mode must be 'class' or 'random', got {label_mode!r}")
    rng = np.random.default_rng(seed)
    mu = rng.standard_normal(d)
    X, y = _sample_points(spec, mu, n, rng, label_mode)
    meta = DatasetMeta(n=n, d=d, seed=seed, label_mode=label_mode, spec=spec,
                       gram_realized=float(mu @ mu / d))
    return Dataset(X=X, y=y, mu=mu, meta=meta)


def _sample_points(spec: ProblemSpec, mu: np.ndarray, n: int,
                   rng: np.random.Generator, label_mode: str) -> tuple[np.ndarray, np.ndarray]:
    d = mu.size
    cloud = np.where(rng.random(n) < spec.rho_plus, 1.0, -1.0)
    deltas = _sample_rng(spec.variance, n, rng)
    X = cloud[:, None] * (mu / math.sqrt(d))[None, :]
    X += np.sqrt(deltas)[:, None] * rng.standard_normal((n, d))
    if label_mode == "random":
        y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    else:
        y = cloud.copy()
    return X, y


# ---------------------------------------------------------------------------
# fits
# ---------------------------------------------------------------------------

def fit_ridge_square(data: Dataset, lam: float) -> Estimator:
    """Exact minimiser of sum_i (y_i - x_i.w/sqrt(d) - b)^2/2 + lam ||w||^2/2.

    The bias is unregularised.  Solved through the (d+1)-dimensional normal
    equations; lam = 0 falls back to the joint minimum-norm least-squares
    solution (flagged in the diagnostics).
    """
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    n, d = data.X.shape
    A = data.X / math.sqrt(d)
    y = data.y
    if lam == 0.0:
        design = np.hstack([A, np.ones((n, 1))])
        coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        w, b = coef[:d], float(coef[d])
        fallback = True
    else:
        ata = A.T @ A
        ata[np.diag_indices(d)] += lam
        col = A.T @ np.ones(n)
        M = np.empty((d + 1, d + 1))
        M[:d, :d] = ata
        M[:d, d] = col
        M[d, :d] = col
        M[d, d] = n
        rhs = np.concatenate([A.T @ y, [y.sum()]])
        coef = scipy.linalg.solve(M, rhs, assume_a="sym")
        w, b = coef[:d], float(coef[d])
        fallback = False
    resid = A @ w + b - y
    grad_w = A.T @ resid + lam * w
    grad = math.hypot(float(np.linalg.norm(grad_w)), float(resid.sum()))
    obj = 0.5 * float(resid @ resid) + 0.5 * lam * float(w @ w)
    return Estimator(w=w, b=b, diagnostics=FitDiagnostics(
        objective=obj, grad_norm=grad, iterations=1, min_norm_fallback=fallback))


def fit_logistic(data: Dataset, lam: float, tol: float = 1e-6,
                 max_iter: int = 500, divergence_guard: float = 1e3) -> Estimator:
    """Ridge-regularised logistic fit to gradient norm <= tol.

    Newton-CG with a matrix-free Hessian product; strict convexity needs
    lam > 0.  Estimators whose weight norm exceeds ``divergence_guard`` are
    flagged as diverged, the signature of a separable training set at
    vanishing regularisation.
    """
    if lam <= 0:
        raise ValueError(f"logistic fit requires lambda > 0, got {lam}")
    n, d = data.X.shape
    A = data.X / math.sqrt(d)
    y = data.y

    def unpack(theta):
        return theta[:d], theta[d]

    def objective(theta):
        w, b = unpack(theta)
        margins = y * (A @ w + b)
        return float(np.logaddexp(0.0, -margins).sum() + 0.5 * lam * (w @ w))

    def gradient(theta):
        w, b = unpack(theta)
        margins = y * (A @ w + b)
        g = -y * expit(-margins)  # d loss / d score
        grad_w = A.T @ g + lam * w
        return np.concatenate([grad_w, [g.sum()]])

    def hessp(theta, vec):
        w, b = unpack(theta)
        margins = y * (A @ w + b)
        curv = expit(margins) * expit(-margins)
        sv = A @ vec[:d] + vec[d]
        hv_w = A.T @ (curv * sv) + lam * vec[:d]
        return np.concatenate([hv_w, [float(curv @ sv)]])

    theta = np.zeros(d + 1)
    nit = 0
    for xtol in (1e-10, 1e-13):
        res = minimize(objective, theta, jac=gradient, hessp=hessp, method="Newton-CG",
                       options={"maxiter": max_iter, "xtol": xtol})
        theta = res.x
        nit += int(res.nit)
        if np.linalg.norm(gradient(theta)) <= tol:
            break
    grad_norm = float(np.linalg.norm(gradient(theta)))
    w, b = theta[:d], float(theta[d])
    diverged = bool(np.linalg.norm(w) > divergence_guard)
    diag = FitDiagnostics(objective=objective(theta), grad_norm=grad_norm,
                          iterations=nit, diverged=diverged)
    est = Estimator(w=w, b=b, diagnostics=diag)
    if grad_norm > tol and not diverged:
        raise FitError(f"logistic fit stalled at gradient norm {grad_norm:.3e} (tol {tol:.1e})", est)
    return est


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EmpiricalReport:
    eps_g: float
    eps_t: float
    eps_l: float
    mse_g: float


def _loss_values(kind: LossKind, y: np.ndarray, scores: np.ndarray) -> np.ndarray:
    if kind is LossKind.SQUARE:
        return 0.5 * (y - scores) ** 2
    return np.logaddexp(0.0, -y * scores)


def evaluate(est: Estimator, spec: ProblemSpec, data: Dataset,
             n_test: int = 100_000, seed: int = 0) -> EmpiricalReport:
    """Training metrics on ``data``; test metrics on a fresh draw.

    The test sample reuses the dataset's centroid (the task instance is
    fixed) but fresh variances, noise, clouds and labels.  The test MSE is
    E[(y - x.w / sqrt(d))^2], the bias-free score convention of the
    random-labels diagnostics.
    """
    scores_tr = est.scores(data.X)
    pred_tr = np.where(scores_tr >= 0.0, 1.0, -1.0)
    eps_t = float(np.mean(pred_tr != data.y))
    eps_l = float(np.mean(_loss_values(data.meta.spec.loss, data.y, scores_tr)))

    rng = np.random.default_rng(seed)
    X_te, y_te = _sample_points(spec, data.mu, n_test, rng, data.meta.label_mode)
    scores_te = est.scores(X_te)
    pred_te = np.where(scores_te >= 0.0, 1.0, -1.0)
    eps_g = float(np.mean(pred_te != y_te))
    raw = X_te @ est.w / math.sqrt(X_te.shape[1])
    mse_g = float(np.mean((y_te - raw) ** 2))
    return EmpiricalReport(eps_g=eps_g, eps_t=eps_t, eps_l=eps_l, mse_g=mse_g)


# ---------------------------------------------------------------------------
# experiment harness
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentRow:
    alpha: float
    n_ok: int
    n_failed: int
    means: dict
    stderrs: dict


def _derived_seed(seed: int, alpha_index: int) -> int:
    return int(np.random.SeedSequence([seed, alpha_index]).generate_state(1)[0])


def run_experiment(spec: ProblemSpec, alpha_grid: Sequence[float], d: int,
                   seeds: Sequence[int], fitter: Callable[[Dataset], Estimator],
                   label_mode: str = "class", n_test: int = 100_000,
                   alpha_index_offset: int = 0) -> list[ExperimentRow]:
    """Per-alpha aggregation of empirical metrics over independent seeds.

    One row per grid point with the mean and standard error of each metric.
    Per-seed fit failures are recorded in the row, not raised.  RNG streams
    are derived per (seed, alpha index) pair, so results do not depend on
    execution order; ``alpha_index_offset`` keeps the derivation stable when
    a grid is dispatched point by point.
    """
    if len(seeds) < 1:
        raise ValueError("need at least one seed")
    rows = []
    metrics = ("eps_g", "eps_t", "eps_l", "mse_g")
    for i0, alpha in enumerate(alpha_grid):
        i = i0 + alpha_index_offset
        n = max(1, round(alpha * d))
        samples = {k: [] for k in metrics}
        failed = 0
        for s in seeds:
            ds_seed = _derived_seed(s, i)
            data = sample_dataset(spec, n, d, ds_seed, label_mode=label_mode)
            try:
                est = fitter(data)
            except FitError:
                failed += 1
                continue
            rep = evaluate(est, spec, data, n_test=n_test, seed=ds_seed + 1)
            for k in metrics:
                samples[k].append(getattr(rep, k))
        means, ses = {}, {}
        for k in metrics:
            vals = np.asarray(samples[k])
            if vals.size:
                means[k] = float(vals.mean())
                ses[k] = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
            else:
                means[k] = math.nan
                ses[k] = math.nan
        rows.append(ExperimentRow(alpha=float(alpha), n_ok=len(samples["eps_g"]),
                                  n_failed=failed, means=means, stderrs=ses))
    return rows

"""Command-line experiment runner.

Usage:  solver <command> --config <path> [--out <path>] [--seed N] [--threads N]

Commands:
    sweep-alpha     theory curves over an alpha grid, plus finite-size
                    experiments when d > 0 and seeds > 0
    simulate        finite-size experiments only
    random-labels   random-label square-loss theory and experiments
    bayes           Bayes-optimal error over an alpha grid
    separability    linear-separability threshold for one variance law
    optimal-lambda  test-error scan over a lambda grid at fixed alpha

Configuration lives in a declarative key=value file (one key per line,
'#' starts a comment, grids are comma-separated).  The --out, --seed and
--threads flags override the corresponding file keys.  Runs are
reproducible byte-for-byte given the same configuration.  Exit codes:
0 success, 1 invalid configuration, 2 finished with unconverged rows.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial
from pathlib import Path
from typing import Optional, Sequence

from . import metrics as met
from . import separability as sep
from .erm import fit_logistic, fit_ridge_square, run_experiment
from .losses import LossKind
from .state_evolution import ProblemSpec, SolverConfig, solve_se, solve_rl_square
from .variance import (
    Contaminated,
    InverseGamma,
    MomentConditionError,
    MonteCarlo,
    PointMass,
    Quadrature,
    VarianceModel,
    moments,
)

COMMANDS = ("sweep-alpha", "simulate", "random-labels", "bayes", "separability", "optimal-lambda")

SWEEP_COLUMNS = ("alpha", "eps_g_theory", "eps_t_theory", "eps_l_theory", "eps_bayes",
                 "eps_g_emp_mean", "eps_g_emp_se", "eps_t_emp_mean", "eps_t_emp_se",
                 "eps_l_emp_mean", "eps_l_emp_se", "converged")
RL_COLUMNS = ("alpha", "eps_l_theory", "eps_l_universal", "eps_t_theory", "mse_theory",
              "eps_l_emp_mean", "eps_l_emp_se", "eps_t_emp_mean", "eps_t_emp_se",
              "mse_emp_mean", "mse_emp_se", "converged")
BAYES_COLUMNS = ("alpha", "eps_bayes")
SEP_COLUMNS = ("kind", "r", "a", "c", "delta", "rho_plus",
               "alpha_star", "theta_star", "gamma_star", "S_at_opt", "converged")
LAMBDA_COLUMNS = ("lambda", "eps_g_theory", "is_optimal", "converged")


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    command: str
    loss: LossKind = LossKind.SQUARE
    lam: float = 1e-5
    lambda_grid: tuple[float, ...] = ()
    alpha: Optional[float] = None
    alpha_grid: tuple[float, ...] = ()
    rho_plus: float = 0.5
    variance: VarianceModel = field(default_factory=lambda: PointMass(1.0))
    tol: float = 1e-5
    max_iter: int = 1000
    damping: float = 0.5
    zeta_nodes: int = 127
    delta_method: str = "mc"  # mc | quadrature
    mc_samples: int = 100_000
    quad_nodes: int = 512
    seed: int = 0
    d: int = 0
    seeds: int = 0
    n_test: int = 100_000
    out: Optional[str] = None
    threads: int = 0  # 0 -> SOLVER_THREADS env var or 1

    def solver_config(self) -> SolverConfig:
        if self.delta_method == "mc":
            dm = MonteCarlo(self.mc_samples, self.seed)
        elif self.delta_method == "quadrature":
            dm = Quadrature(nodes=self.quad_nodes)
        else:
            raise ConfigError(f"delta_method must be 'mc' or 'quadrature', got {self.delta_method!r}")
        return SolverConfig(damping=self.damping, tol=self.tol, max_iter=self.max_iter,
                            zeta_nodes=self.zeta_nodes, delta_method=dm)

    def problem_spec(self, alpha: float, lam: Optional[float] = None) -> ProblemSpec:
        return ProblemSpec(alpha=alpha, lam=self.lam if lam is None else lam,
                           rho_plus=self.rho_plus, loss=self.loss, variance=self.variance)

    def effective_threads(self) -> int:
        if self.threads > 0:
            return self.threads
        env = os.environ.get("SOLVER_THREADS", "")
        return int(env) if env.isdigit() and int(env) > 0 else 1


def parse_config_text(text: str) -> dict:
    keys = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        keys[key.strip().lower()] = value.strip()
    return keys


def _floats(value: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in value.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"cannot parse number list from {value!r}") from exc


def _variance_from_keys(keys: dict) -> VarianceModel:
    kind = keys.get("kind", "point_mass").lower()
    try:
        if kind in ("point_mass", "pointmass"):
            return PointMass(float(keys.get("delta", 1.0)))
        if kind in ("inverse_gamma", "inversegamma"):
            return InverseGamma(float(keys["a"]), float(keys["c"]))
        if kind == "contaminated":
            return Contaminated(float(keys["r"]), float(keys["a"]), float(keys["c"]))
    except KeyError as exc:
        raise ConfigError(f"variance kind {kind!r} is missing parameter {exc}") from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    raise ConfigError(f"unknown variance kind {kind!r}")


def load_config(path: str, command: str, overrides: Optional[dict] = None) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    keys = parse_config_text(text)
    if "command" in keys and keys["command"] != command:
        raise ConfigError(f"config file is for command {keys['command']!r}, not {command!r}")
    if overrides:
        keys.update({k: v for k, v in overrides.items() if v is not None})

    def get(key, cast, default):
        if key not in keys:
            return default
        try:
            return cast(keys[key])
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {key!r}: {keys[key]!r}") from exc

    loss_name = keys.get("loss", "square").lower()
    try:
        loss = LossKind(loss_name)
    except ValueError:
        raise ConfigError(f"loss must be 'square' or 'logistic', got {loss_name!r}") from None

    cfg = RunConfig(
        command=command,
        loss=loss,
        lam=get("lambda", float, 1e-5),
        lambda_grid=get("lambda_grid", _floats, ()),
        alpha=get("alpha", float, None),
        alpha_grid=get("alpha_grid", _floats, ()),
        rho_plus=get("rho_plus", float, 0.5),
        variance=_variance_from_keys(keys),
        tol=get("tol", float, 1e-5),
        max_iter=get("max_iter", int, 1000),
        damping=get("damping", float, 0.5),
        zeta_nodes=get("zeta_nodes", int, 127),
        delta_method=keys.get("delta_method", "mc").lower(),
        mc_samples=get("mc_samples", int, 100_000),
        quad_nodes=get("quad_nodes", int, 512),
        seed=get("seed", int, 0),
        d=get("d", int, 0),
        seeds=get("seeds", int, 0),
        n_test=get("n_test", int, 100_000),
        out=keys.get("out"),
        threads=get("threads", int, 0),
    )
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig):
    if cfg.command not in COMMANDS:
        raise ConfigError(f"unknown command {cfg.command!r}")
    if cfg.command in ("sweep-alpha", "simulate", "random-labels", "bayes") and not cfg.alpha_grid:
        raise ConfigError(f"{cfg.command} requires a non-empty alpha_grid")
    if cfg.command == "optimal-lambda":
        if not cfg.lambda_grid:
            raise ConfigError("optimal-lambda requires a non-empty lambda_grid")
        if cfg.alpha is None:
            raise ConfigError("optimal-lambda requires alpha")
    if cfg.command == "simulate" and (cfg.d <= 0 or cfg.seeds <= 0):
        raise ConfigError("simulate requires d > 0 and seeds > 0")
    if cfg.command == "random-labels" and cfg.loss is not LossKind.SQUARE:
        raise ConfigError("random-labels is a square-loss analysis; set loss = square")
    if cfg.delta_method not in ("mc", "quadrature"):
        raise ConfigError(f"delta_method must be 'mc' or 'quadrature', got {cfg.delta_method!r}")
    cfg.solver_config()  # validates solver knobs


# ---------------------------------------------------------------------------
# tables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepTable:
    columns: tuple[str, ...]
    rows: tuple[dict, ...]

    def all_converged(self) -> bool:
        return all(r.get("converged", 1) in (1, "1", True, "") for r in self.rows)


def format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, int):
        return str(value)
    x = float(value)
    if math.isnan(x):
        return ""
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".9g")


def write_csv(table: SweepTable, path: str) -> None:
    """Write the table as CSV (header row, 9 significant digits)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(table.columns)
        for row in table.rows:
            writer.writerow([format_cell(row.get(c)) for c in table.columns])


def read_csv(path: str) -> SweepTable:
    """Parse a table written by :func:`write_csv` (strings preserved)."""
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        rows = tuple(dict(zip(header, r)) for r in reader)
    return SweepTable(columns=header, rows=rows)


# ---------------------------------------------------------------------------
# per-point theory/experiment workers (top level: picklable for worker pools)
# ---------------------------------------------------------------------------

def _bayes_or_none(cfg: RunConfig, alpha: float) -> Optional[float]:
    try:
        return met.bayes_optimal_error(cfg.variance, cfg.rho_plus, alpha, nodes=cfg.quad_nodes)
    except MomentConditionError:
        return None


def _fitter_for(cfg: RunConfig):
    if cfg.loss is LossKind.SQUARE:
        return partial(fit_ridge_square, lam=cfg.lam)
    return partial(fit_logistic, lam=cfg.lam)


def _empirical_cells(cfg: RunConfig, alpha: float, index: int, label_mode: str,
                     keys=("eps_g", "eps_t", "eps_l")) -> dict:
    spec = cfg.problem_spec(alpha)
    seeds = [cfg.seed + 1000 * (j + 1) for j in range(cfg.seeds)]
    rows = run_experiment(spec, [alpha], cfg.d, seeds, _fitter_for(cfg),
                          label_mode=label_mode, n_test=cfg.n_test,
                          alpha_index_offset=index)
    row = rows[0]
    cells = {}
    for k in keys:
        cells[f"{k.replace('mse_g', 'mse')}_emp_mean"] = row.means[k]
        cells[f"{k.replace('mse_g', 'mse')}_emp_se"] = row.stderrs[k]
    cells["_fit_failures"] = row.n_failed
    return cells


def _sweep_point(cfg: RunConfig, index: int, alpha: float) -> dict:
    spec = cfg.problem_spec(alpha)
    solver_cfg = cfg.solver_config()
    res = solve_se(spec, solver_cfg)
    eps_g = met.generalisation_error(res.params, spec, nodes=cfg.quad_nodes)
    eps_t, eps_l = met.training_metrics(res.params, spec, solver_cfg)
    row = {"alpha": alpha, "eps_g_theory": eps_g, "eps_t_theory": eps_t,
           "eps_l_theory": eps_l, "eps_bayes": _bayes_or_none(cfg, alpha),
           "converged": res.converged}
    if cfg.d > 0 and cfg.seeds > 0:
        cells = _empirical_cells(cfg, alpha, index, "class")
        row["converged"] = bool(row["converged"]) and cells.pop("_fit_failures") == 0
        row.update(cells)
    return row


def _simulate_point(cfg: RunConfig, index: int, alpha: float) -> dict:
    cells = _empirical_cells(cfg, alpha, index, "class")
    return {"alpha": alpha, "converged": cells.pop("_fit_failures") == 0, **cells}


def _rl_point(cfg: RunConfig, index: int, alpha: float) -> dict:
    rl = solve_rl_square(alpha, cfg.lam, cfg.variance, cfg.solver_config())
    spec = cfg.problem_spec(alpha)
    row = {"alpha": alpha, "eps_l_universal": met.rl_training_loss(alpha), "converged": rl.converged}
    if rl.converged and math.isfinite(rl.v):
        from .state_evolution import OrderParams
        p = OrderParams(m_plus=0.0, m_minus=0.0, q=rl.q, v=rl.v, b=0.0)
        eps_t, eps_l = met.training_metrics(p, spec, cfg.solver_config())
        row.update(eps_l_theory=eps_l, eps_t_theory=eps_t, mse_theory=met.rl_mse(rl.q, cfg.variance))
    if cfg.d > 0 and cfg.seeds > 0:
        cells = _empirical_cells(cfg, alpha, index, "random", keys=("eps_l", "eps_t", "mse_g"))
        row["converged"] = bool(row["converged"]) and cells.pop("_fit_failures") == 0
        row.update(cells)
    return row


def _bayes_point(cfg: RunConfig, index: int, alpha: float) -> dict:
    value = _bayes_or_none(cfg, alpha)
    if value is None:
        mom = moments(cfg.variance)
        which = "E[Delta]" if not mom.mean_finite else "E[Delta^-2]"
        raise ConfigError(f"Bayes error undefined for this variance law: {which} is infinite")
    return {"alpha": alpha, "eps_bayes": value}


def _lambda_point(cfg: RunConfig, index: int, lam: float) -> dict:
    assert cfg.alpha is not None
    spec = cfg.problem_spec(cfg.alpha, lam=lam)
    res = solve_se(spec, cfg.solver_config())
    eps_g = met.generalisation_error(res.params, spec, nodes=cfg.quad_nodes)
    return {"lambda": lam, "eps_g_theory": eps_g, "converged": res.converged}


_POINT_FUNCS = {
    "sweep-alpha": _sweep_point,
    "simulate": _simulate_point,
    "random-labels": _rl_point,
    "bayes": _bayes_point,
    "optimal-lambda": _lambda_point,
}


def _point_worker(args) -> dict:
    cfg, index, grid_value = args
    return _POINT_FUNCS[cfg.command](cfg, index, grid_value)


# ---------------------------------------------------------------------------
# command drivers
# ---------------------------------------------------------------------------

def _map_points(cfg: RunConfig, grid: Sequence[float]) -> list[dict]:
    jobs = [(cfg, i, g) for i, g in enumerate(grid)]
    threads = cfg.effective_threads()
    if threads <= 1 or len(jobs) <= 1:
        return [_point_worker(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_point_worker, jobs))  # output in grid order


def run(cfg: RunConfig) -> SweepTable:
    """Execute one configured command and return its table."""
    if cfg.command == "separability":
        result = sep.alpha_star(cfg.variance, cfg.rho_plus, nodes=cfg.quad_nodes)
        row = {"kind": type(cfg.variance).__name__, "rho_plus": cfg.rho_plus,
               "alpha_star": result.alpha_star, "theta_star": result.theta_star,
               "gamma_star": result.gamma_star, "S_at_opt": result.S_at_opt,
               "converged": result.converged}
        for attr in ("r", "a", "c"):
            row[attr] = getattr(cfg.variance, attr, None)
        row["delta"] = getattr(cfg.variance, "delta0", None)
        return SweepTable(SEP_COLUMNS, (row,))

    if cfg.command == "optimal-lambda":
        rows = _map_points(cfg, cfg.lambda_grid)
        values = [r["eps_g_theory"] for r in rows]
        best = min(range(len(values)), key=values.__getitem__)
        for i, r in enumerate(rows):
            r["is_optimal"] = (i == best)
        return SweepTable(LAMBDA_COLUMNS, tuple(rows))

    rows = _map_points(cfg, cfg.alpha_grid)
    columns = {"sweep-alpha": SWEEP_COLUMNS, "simulate": SWEEP_COLUMNS,
               "random-labels": RL_COLUMNS, "bayes": BAYES_COLUMNS}[cfg.command]
    return SweepTable(columns, tuple(rows))


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="solver",
        description="Asymptotic theory and finite-size experiments for "
                    "classification of Gaussian scale-mixture clouds.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="key=value configuration file")
    parser.add_argument("--out", default=None, help="output CSV path (overrides config)")
    parser.add_argument("--seed", type=int, default=None, help="root seed (overrides config)")
    parser.add_argument("--threads", type=int, default=None, help="worker count (overrides config)")
    args = parser.parse_args(argv)

    overrides = {"out": args.out,
                 "seed": None if args.seed is None else str(args.seed),
                 "threads": None if args.threads is None else str(args.threads)}
    try:
        cfg = load_config(args.config, args.command, overrides)
        table = run(cfg)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out_path = cfg.out or f"{cfg.command.replace('-', '_')}.csv"
    write_csv(table, out_path)
    ok = table.all_converged()
    print(f"wrote {len(table.rows)} rows to {out_path}"
          + ("" if ok else " (some rows did not converge)"))
    return 0 if ok else 2


if __name__ == "__main__":
    sys.exit(main())

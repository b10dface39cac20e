"""Empirical solution statistics and prediction-vs-empirical harnesses.

empirical_metrics counts support recovery of a single solution;
sweep_path re-solves an instance across a penalty grid (no warm starts, so
grid points stay independent draws for the prediction comparison) and pairs
each point with its state-evolution prediction; qq_compare matches the
quantiles of a solution against samples of the predicted limiting law.
"""

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import generate_instance
from .solvers import FixedLambda, SolverConfig, solve
from .state_evolution import alpha_of_lambda, predict_metrics, prox_limit_sample

__all__ = ["Metrics", "PathRow", "PathResult", "empirical_metrics", "sweep_path",
           "qq_compare", "ZERO_TOL"]

# solver outputs carry exact zeros out of the prox; this only guards round-off
ZERO_TOL = 1e-10


@dataclass(frozen=True)
class Metrics:
    mse: float
    tpp: float
    fdp: float
    n_selected: int


def empirical_metrics(beta_hat, beta0, zero_tol=ZERO_TOL):
    """MSE and support-recovery counts of beta_hat against the truth beta0.

    tpp = |{j: both nonzero}| / |support(beta0)|, fdp = |{j: selected but
    null}| / |selected|, with 0/0 -> 0 for fdp and NaN tpp when beta0 has no
    support at all.
    """
    beta_hat = np.asarray(beta_hat, dtype=float)
    beta0 = np.asarray(beta0, dtype=float)
    if beta_hat.shape != beta0.shape:
        raise ValueError(f"shape mismatch: {beta_hat.shape} vs {beta0.shape}")
    sel = np.abs(beta_hat) > zero_tol
    true = np.abs(beta0) > zero_tol
    n_selected = int(sel.sum())
    n_true = int(true.sum())
    tp = int((sel & true).sum())
    fd = int((sel & ~true).sum())
    mse = float(np.sum((beta_hat - beta0) ** 2)) / beta0.size
    tpp = tp / n_true if n_true > 0 else float("nan")
    fdp = fd / n_selected if n_selected > 0 else 0.0
    return Metrics(mse=mse, tpp=tpp, fdp=fdp, n_selected=n_selected)


@dataclass
class PathRow:
    lam: float
    empirical_mse: float
    tpp: float
    fdp: float
    n_selected: float
    predicted_mse: Optional[float] = None
    tpp_inf: Optional[float] = None
    fdp_inf: Optional[float] = None


@dataclass
class PathResult:
    lambdas: np.ndarray
    rows: list

    def column(self, name):
        return np.array(
            [getattr(r, name) if getattr(r, name) is not None else np.nan
             for r in self.rows]
        )


def _default_config(solver):
    if solver == "amp":
        return SolverConfig(max_iters=300, tol=1e-9, threshold_policy=FixedLambda())
    if solver == "vamp":
        return SolverConfig(max_iters=500, tol=1e-9)
    return SolverConfig(max_iters=5000, tol=1e-9)


def sweep_path(design, prior, partition, gamma, lambda_grid, solver="amp",
               se_params=None, group_mode="mixed", seeds=(0,), solver_config=None):
    """Solve the instance afresh at every grid penalty and average over seeds.

    Empirical columns come from :func:`empirical_metrics` on each solve;
    predicted columns are filled through the alpha(lambda) calibration when
    se_params is given (grid points at or above lambda_max keep the
    empirical values and leave predictions unavailable).
    """
    lambda_grid = np.asarray(lambda_grid, dtype=float)
    if lambda_grid.size == 0:
        raise ValueError("lambda grid is empty")
    if np.any(np.diff(lambda_grid) <= 0.0):
        raise ValueError("lambda grid must be strictly increasing")

    per_seed = {lam: [] for lam in lambda_grid}
    for seed in seeds:
        for lam in lambda_grid:
            inst = generate_instance(design, prior, partition, lam=float(lam),
                                     gamma=gamma, group_mode=group_mode, seed=seed)
            cfg = solver_config if solver_config is not None else _default_config(solver)
            trace = solve(solver, inst, cfg)
            per_seed[lam].append(empirical_metrics(trace.final_beta, inst.truth.beta0))

    rows = []
    for lam in lambda_grid:
        ms = per_seed[lam]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            row = PathRow(
                lam=float(lam),
                empirical_mse=float(np.mean([m.mse for m in ms])),
                tpp=float(np.nanmean([m.tpp for m in ms])),
                fdp=float(np.mean([m.fdp for m in ms])),
                n_selected=float(np.mean([m.n_selected for m in ms])),
            )
        if se_params is not None:
            try:
                alpha = alpha_of_lambda(float(lam), se_params)
                pred = predict_metrics(alpha, se_params)
                row.predicted_mse = float(pred.predicted_mse)
                row.tpp_inf = float(pred.tpp_inf)
                row.fdp_inf = float(pred.fdp_inf)
            except ValueError:
                pass  # lambda at or above lambda_max: prediction unavailable
        rows.append(row)
    return PathResult(lambdas=lambda_grid, rows=rows)


def qq_compare(beta_hat, se_outcome, params, seed=None, n_quantiles=99):
    """Paired quantiles of a solution against the predicted limiting law.

    Returns an (n_quantiles, 3) array of (prob, empirical_q, predicted_q) at
    probabilities 1..n_quantiles percent; the prediction samples
    prox(signal + tau* Z, alpha tau*) under the frozen group layout.
    """
    probs = np.arange(1, n_quantiles + 1) / (n_quantiles + 1) * 100.0
    predicted = prox_limit_sample(se_outcome.alpha, se_outcome.tau_star, params,
                                  seed=seed)
    emp_q = np.percentile(np.asarray(beta_hat, dtype=float), probs)
    pred_q = np.percentile(predicted, probs)
    return np.column_stack([probs / 100.0, emp_q, pred_q])

"""Figure rendering for the command-line report paths.

Every CLI subcommand that writes delimited output can render a companion
PNG next to it; the CSV stays the machine-readable contract and these plots
are the human-readable view.  All rendering targets files (Agg backend).
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["solve_figure", "bench_figure", "path_figure", "qq_figure", "se_figure"]

_DPI = 150


def _finish(fig, out_path):
    fig.tight_layout()
    fig.savefig(out_path, dpi=_DPI)
    plt.close(fig)


def solve_figure(trace, out_path, title=None):
    """Cost and optimization-MSE curves of a single solver run."""
    iters = [r[0] for r in trace.records]
    costs = trace.costs
    have_mse = np.isfinite(trace.opt_mses).any()
    fig, axes = plt.subplots(1, 2 if have_mse else 1, figsize=(9 if have_mse else 5, 3.4))
    axes = np.atleast_1d(axes)
    ax = axes[0]
    ax.plot(iters, costs, "-", lw=1.5)
    ax.set_xlabel("iteration")
    ax.set_ylabel("cost")
    if title:
        ax.set_title(title)
    if have_mse:
        ax2 = axes[1]
        ax2.semilogy(iters, trace.opt_mses, "-", lw=1.5)
        ax2.set_xlabel("iteration")
        ax2.set_ylabel(r"$\|\beta_t-\beta_{\rm ref}\|^2/p$")
    _finish(fig, out_path)


def bench_figure(traces, out_path, targets=()):
    """Optimization error per iteration and per wall-clock for each solver."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 3.6))
    for name, trace in traces.items():
        iters = [r[0] for r in trace.records]
        walls = [r[3] / 1e6 for r in trace.records]
        mses = trace.opt_mses
        ax1.semilogy(iters, mses, lw=1.5, label=name)
        ax2.semilogy(walls, mses, lw=1.5, label=name)
    for tg in targets:
        ax1.axhline(tg, color="gray", lw=0.5, ls=":")
    ax1.set_xlabel("iteration")
    ax1.set_ylabel("optimization MSE")
    ax1.legend()
    ax2.set_xlabel("wall clock [ms]")
    ax2.legend()
    _finish(fig, out_path)


def path_figure(result, out_path):
    """MSE / TPP / FDP along the penalty grid, empirical vs predicted."""
    lam = result.lambdas
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.4))
    panels = [
        ("empirical_mse", "predicted_mse", "MSE"),
        ("tpp", "tpp_inf", "TPP"),
        ("fdp", "fdp_inf", "FDP"),
    ]
    for ax, (emp, pred, label) in zip(axes, panels):
        ax.plot(lam, result.column(emp), "o", ms=4, label="empirical")
        pred_col = result.column(pred)
        if np.isfinite(pred_col).any():
            ax.plot(lam, pred_col, "-", lw=1.5, label="predicted")
        ax.set_xlabel(r"$\lambda$")
        ax.set_ylabel(label)
        ax.legend(fontsize=8)
    _finish(fig, out_path)


def qq_figure(table, out_path):
    """Quantile-quantile scatter of empirical vs predicted solution law."""
    table = np.asarray(table)
    fig, ax = plt.subplots(figsize=(4.4, 4.2))
    ax.plot(table[:, 2], table[:, 1], "o", ms=3)
    lims = [table[:, 1:].min(), table[:, 1:].max()]
    ax.plot(lims, lims, "k-", lw=0.8)
    ax.set_xlabel("predicted quantiles")
    ax.set_ylabel("empirical quantiles")
    _finish(fig, out_path)


def se_figure(outcome, out_path):
    """Effective-noise schedule tau_t with its fixed point."""
    fig, ax = plt.subplots(figsize=(5, 3.4))
    ax.plot(np.arange(len(outcome.tau_schedule)), outcome.tau_schedule, "o-", ms=3, lw=1)
    ax.axhline(outcome.tau_star, color="gray", lw=0.8, ls="--",
               label=rf"$\tau_*={outcome.tau_star:.4f}$")
    ax.set_xlabel("t")
    ax.set_ylabel(r"$\tau_t$")
    ax.legend()
    _finish(fig, out_path)

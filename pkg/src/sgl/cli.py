"""Command-line entry point: reproducible generation, solving, prediction,
calibration, path sweeps and solver races.

Every subcommand resolves a flat key=value configuration (defaults, then
--config file, then --set pairs, then named flags), writes the fully
resolved config next to its outputs, and emits CSV plus a companion figure.
Exit codes: 0 success, 2 configuration error, 3 solver divergence.
"""

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import analysis, bench, figures, io
from .model import (
    BernoulliGaussian,
    DesignSpec,
    PointMassMixture,
    PriorSpec,
    ZeroSignal,
    contiguous_partition,
    generate_instance,
    make_partition,
)
from .solvers import (
    EmpiricalTau,
    FixedLambda,
    SEDriven,
    SolverConfig,
    SolverError,
    SOLVERS,
    solve,
)
from .state_evolution import (
    SEParams,
    alpha_of_lambda,
    perfect_group_params,
    predict_metrics,
    se_fixed_point,
)

__all__ = ["ConfigError", "dispatch", "main"]


class ConfigError(Exception):
    pass


def _parse_bool(text):
    t = str(text).strip().lower()
    if t in ("true", "1", "yes"):
        return True
    if t in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _opt_float(text):
    return None if str(text).strip() == "" else float(text)


def _string(text):
    return str(text).strip()


# key -> (parser, default); "" stands for unset on optional values
SCHEMA = {
    "design": (_string, "gaussian"),
    "n": (int, 100),
    "p": (int, 200),
    "condition_number": (float, 1.0),
    "prior": (_string, "point_mass"),
    "prior_eps": (float, 0.1),
    "prior_value": (float, 1.0),
    "prior_sd": (float, 1.0),
    "sigma_w": (float, 0.0),
    "group_sizes": (_string, ""),
    "groups_file": (_string, ""),
    "group_mode": (_string, "mixed"),
    "gamma": (float, 0.5),
    "lambda": (float, 1.0),
    "alpha": (_opt_float, None),
    "seed": (int, 0),
    "output_dir": (_string, "out"),
    "instance": (_string, ""),
    "solver": (_string, "amp"),
    "solvers": (_string, "amp,fista,ista"),
    "max_iters": (int, 0),
    "tol": (float, 1e-8),
    "step_size": (_opt_float, None),
    "step_rule": (_string, "spectral"),
    "damping": (float, 0.1),
    "threshold_policy": (_string, "fixed_lambda"),
    "mc_samples": (int, 10_000),
    "p_mc": (int, 2000),
    "se_seed": (int, 0),
    "lambda_grid": (_string, ""),
    "n_seeds": (int, 1),
    "figures": (_parse_bool, True),
}


def _apply(cfg, key, raw, where):
    if key not in SCHEMA:
        raise ConfigError(f"unknown configuration key {key!r} ({where})")
    parser, _ = SCHEMA[key]
    try:
        cfg[key] = parser(raw)
    except ValueError as e:
        raise ConfigError(f"bad value for key {key!r} ({where}): {e}") from None


def resolve_config(args):
    """defaults < config file < --set pairs < named flags."""
    cfg = {k: d for k, (_, d) in SCHEMA.items()}
    explicit = set()
    if args.config:
        for key, raw in io.read_kv(args.config).items():
            _apply(cfg, key, raw, args.config)
    for pair in args.set or []:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, _, raw = pair.partition("=")
        _apply(cfg, key.strip(), raw.strip(), "--set")
        explicit.add(key.strip())
    for key, attr in _FLAG_KEYS.items():
        value = getattr(args, attr, None)
        if value is not None:
            _apply(cfg, key, value, f"--{key.replace('_', '-')}")
            explicit.add(key)
    if args.no_figures:
        cfg["figures"] = False
    cfg["_explicit"] = explicit
    return cfg


def format_config(cfg):
    out = {}
    for key in sorted(SCHEMA):
        value = cfg[key]
        if value is None:
            out[key] = ""
        elif isinstance(value, bool):
            out[key] = "true" if value else "false"
        else:
            out[key] = value
    return out


def build_prior(cfg):
    kind = cfg["prior"]
    if kind == "point_mass":
        signal = PointMassMixture(cfg["prior_eps"], cfg["prior_value"])
    elif kind == "bernoulli_gaussian":
        signal = BernoulliGaussian(cfg["prior_eps"], cfg["prior_sd"])
    elif kind == "zero":
        signal = ZeroSignal()
    else:
        raise ConfigError(f"unknown value for key 'prior': {kind!r}")
    return PriorSpec(signal, noise_sd=cfg["sigma_w"])


def build_partition(cfg):
    if cfg["groups_file"]:
        membership = io.read_vector(cfg["groups_file"]).astype(np.int64)
        return make_partition(membership)
    if cfg["group_sizes"]:
        sizes = [int(s) for s in cfg["group_sizes"].split(",") if s.strip()]
        if sum(sizes) != cfg["p"]:
            raise ConfigError(
                f"key 'group_sizes' sums to {sum(sizes)}, p = {cfg['p']}"
            )
        return contiguous_partition(sizes)
    return contiguous_partition([cfg["p"]])


def build_design(cfg):
    try:
        return DesignSpec(cfg["design"], cfg["n"], cfg["p"], cfg["condition_number"])
    except ValueError as e:
        raise ConfigError(f"key 'design': {e}") from None


def build_instance(cfg):
    if cfg["instance"]:
        inst = io.load_instance(cfg["instance"])
        overrides = {}
        if "lambda" in cfg["_explicit"]:
            overrides["lam"] = cfg["lambda"]
        if "gamma" in cfg["_explicit"]:
            overrides["gamma"] = cfg["gamma"]
        if overrides:
            from dataclasses import replace

            inst = replace(inst, **overrides)
        return inst
    try:
        return generate_instance(
            build_design(cfg), build_prior(cfg), build_partition(cfg),
            lam=cfg["lambda"], gamma=cfg["gamma"], group_mode=cfg["group_mode"],
            seed=cfg["seed"],
        )
    except ValueError as e:
        raise ConfigError(str(e)) from None


def build_se_params(cfg, partition=None):
    prior = build_prior(cfg)
    partition = partition if partition is not None else build_partition(cfg)
    delta = cfg["n"] / cfg["p"]
    common = dict(mc_samples=cfg["mc_samples"], p_mc=cfg["p_mc"], seed=cfg["se_seed"])
    if cfg["group_mode"] == "perfect":
        if partition.n_groups != 2:
            raise ConfigError("key 'group_mode': perfect needs two groups")
        r1 = partition.sizes[0] / partition.p
        try:
            return perfect_group_params(prior, cfg["gamma"], delta,
                                        signal_fraction=r1, **common)
        except ValueError as e:
            raise ConfigError(str(e)) from None
    ratios = tuple(s / partition.p for s in partition.sizes)
    return SEParams(gamma=cfg["gamma"], delta=delta, prior=prior,
                    group_ratios=ratios, **common)


def build_solver_config(cfg, mse_reference=None):
    name = cfg["solver"]
    if name not in SOLVERS:
        raise ConfigError(f"key 'solver': unknown solver {name!r}")
    max_iters = cfg["max_iters"] or {"amp": 300, "vamp": 500}.get(name, 5000)
    policy = None
    if name == "amp":
        choice = cfg["threshold_policy"]
        if choice == "fixed_lambda":
            policy = FixedLambda()
        elif choice == "empirical":
            if cfg["alpha"] is None:
                raise ConfigError("key 'alpha' required for threshold_policy=empirical")
            policy = EmpiricalTau(cfg["alpha"])
        elif choice == "se":
            if cfg["alpha"] is None:
                raise ConfigError("key 'alpha' required for threshold_policy=se")
            outcome = se_fixed_point(cfg["alpha"], build_se_params(cfg))
            policy = SEDriven.from_outcome(outcome)
        else:
            raise ConfigError(
                f"key 'threshold_policy': unknown policy {cfg['threshold_policy']!r}"
            )
    try:
        return SolverConfig(
            max_iters=max_iters, tol=cfg["tol"], threshold_policy=policy,
            step_size=cfg["step_size"], step_rule=cfg["step_rule"],
            damping=cfg["damping"], mse_reference=mse_reference,
        )
    except ValueError as e:
        raise ConfigError(str(e)) from None


def _parse_grid(text):
    text = text.strip()
    if not text:
        raise ConfigError("key 'lambda_grid' is required for this subcommand")
    if text.startswith(("lin:", "log:")):
        kind, lo, hi, num = text.split(":")
        lo, hi, num = float(lo), float(hi), int(num)
        grid = np.linspace(lo, hi, num) if kind == "lin" else np.geomspace(lo, hi, num)
    else:
        grid = np.array([float(v) for v in text.split(",")])
    if np.any(np.diff(grid) <= 0):
        raise ConfigError("key 'lambda_grid' must be strictly increasing")
    return grid


def _out_dir(cfg):
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    io.write_kv(out / "resolved.cfg", format_config(cfg))
    return out


def cmd_gen(cfg):
    out = _out_dir(cfg)
    inst = build_instance(cfg)
    io.save_instance(out, inst, sigma_w=cfg["sigma_w"], seed=cfg["seed"])
    print(f"instance bundle written to {out}")
    return 0


def cmd_solve(cfg):
    out = _out_dir(cfg)
    inst = build_instance(cfg)
    trace = solve(cfg["solver"], inst, build_solver_config(cfg))
    io.write_trace_csv(out / "trace.csv", trace)
    io.write_matrix(out / "beta.vec", trace.final_beta.reshape(-1, 1))
    if cfg["figures"]:
        figures.solve_figure(trace, out / "solve.png", title=cfg["solver"])
    if trace.diagnostic is not None:
        print(f"solver diverged: {trace.diagnostic}", file=sys.stderr)
        return 3
    print(f"{cfg['solver']}: {trace.iters_used} iterations, "
          f"cost {trace.final_cost:.6g}, converged={trace.converged}")
    return 0


def _require_alpha(cfg):
    if cfg["alpha"] is None:
        raise ConfigError("key 'alpha' is required for this subcommand")
    return cfg["alpha"]


def cmd_se(cfg):
    out = _out_dir(cfg)
    alpha = _require_alpha(cfg)
    outcome = se_fixed_point(alpha, build_se_params(cfg))
    io.write_se_outcome(out, outcome, basename="se")
    if cfg["figures"]:
        figures.se_figure(outcome, out / "se.png")
    print(f"tau* = {outcome.tau_star:.6g}, predicted MSE = {outcome.predicted_mse:.6g}")
    return 0


def cmd_calibrate(cfg):
    out = _out_dir(cfg)
    params = build_se_params(cfg)
    try:
        alpha = cfg["alpha"] if cfg["alpha"] is not None else alpha_of_lambda(
            cfg["lambda"], params)
        outcome = predict_metrics(alpha, params)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    io.write_se_outcome(out, outcome, basename="calibrate")
    if cfg["figures"]:
        figures.se_figure(outcome, out / "calibrate.png")
    print(f"alpha = {outcome.alpha:.6g} <-> lambda = {outcome.lam:.6g}; "
          f"tau* = {outcome.tau_star:.6g}")
    return 0


def cmd_path(cfg):
    out = _out_dir(cfg)
    grid = _parse_grid(cfg["lambda_grid"])
    partition = build_partition(cfg)
    result = analysis.sweep_path(
        build_design(cfg), build_prior(cfg), partition, cfg["gamma"], grid,
        solver=cfg["solver"], se_params=build_se_params(cfg, partition),
        group_mode=cfg["group_mode"],
        seeds=tuple(cfg["seed"] + k for k in range(cfg["n_seeds"])),
    )
    io.write_path_csv(out / "path.csv", result)
    if cfg["figures"]:
        figures.path_figure(result, out / "path.png")
    print(f"path over {grid.size} penalties x {cfg['n_seeds']} seeds written to {out}")
    return 0


def cmd_bench(cfg):
    out = _out_dir(cfg)
    inst = build_instance(cfg)
    solvers = tuple(s.strip() for s in cfg["solvers"].split(",") if s.strip())
    for name in solvers:
        if name not in SOLVERS:
            raise ConfigError(f"key 'solvers': unknown solver {name!r}")
    result = bench.race(inst, solvers=solvers, step_size=cfg["step_size"])
    with open(out / "bench.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["solver", "target_mse", "iters", "wall_ns"])
        for row in result.rows:
            writer.writerow([row.solver, repr(row.target_mse),
                             "" if row.iters is None else row.iters,
                             "" if row.wall_ns is None else row.wall_ns])
    if cfg["figures"]:
        figures.bench_figure(result.traces, out / "bench.png",
                             targets=bench.PRECISION_TARGETS)
    for row in result.rows:
        hit = "-" if row.iters is None else row.iters
        print(f"{row.solver:10s} target {row.target_mse:g}: {hit} iterations")
    return 0


def cmd_qq(cfg):
    out = _out_dir(cfg)
    inst = build_instance(cfg)
    params = build_se_params(cfg, inst.partition)
    try:
        alpha = cfg["alpha"] if cfg["alpha"] is not None else alpha_of_lambda(
            cfg["lambda"], params)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    outcome = se_fixed_point(alpha, params)
    trace = solve(cfg["solver"], inst, build_solver_config(cfg))
    table = analysis.qq_compare(trace.final_beta, outcome, params)
    io.write_qq_csv(out / "qq.csv", table)
    if cfg["figures"]:
        figures.qq_figure(table, out / "qq.png")
    gap = float(np.max(np.abs(table[:, 1] - table[:, 2])))
    print(f"max |empirical - predicted| quantile gap: {gap:.6g}")
    return 0


_COMMANDS = {
    "gen": cmd_gen,
    "solve": cmd_solve,
    "se": cmd_se,
    "calibrate": cmd_calibrate,
    "path": cmd_path,
    "bench": cmd_bench,
    "qq": cmd_qq,
}

# named flag -> config key (argparse dest on the right)
_FLAG_KEYS = {
    "design": "design",
    "n": "n",
    "p": "p",
    "prior": "prior",
    "sigma_w": "sigma_w",
    "gamma": "gamma",
    "lambda": "lam",
    "alpha": "alpha",
    "seed": "seed",
    "output_dir": "output_dir",
    "instance": "instance",
    "solver": "solver",
    "solvers": "solvers",
    "max_iters": "max_iters",
    "tol": "tol",
    "damping": "damping",
    "lambda_grid": "lambda_grid",
    "n_seeds": "n_seeds",
    "threshold_policy": "threshold_policy",
}


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="sgl",
        description="Sparse Group LASSO solvers, state evolution and calibration",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key=value configuration file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override any configuration key")
        p.add_argument("--dry-run", action="store_true",
                       help="print the resolved configuration and exit")
        p.add_argument("--no-figures", action="store_true",
                       help="skip figure rendering")
        p.add_argument("--design")
        p.add_argument("--n", type=int)
        p.add_argument("--p", type=int)
        p.add_argument("--prior")
        p.add_argument("--sigma-w", dest="sigma_w")
        p.add_argument("--gamma")
        p.add_argument("--lambda", dest="lam")
        p.add_argument("--alpha")
        p.add_argument("--seed")
        p.add_argument("--output-dir", dest="output_dir")
        p.add_argument("--instance", help="read the instance from this bundle directory")
        p.add_argument("--solver", choices=sorted(SOLVERS))
        p.add_argument("--solvers", help="comma list for bench")
        p.add_argument("--max-iters", dest="max_iters")
        p.add_argument("--tol")
        p.add_argument("--damping")
        p.add_argument("--lambda-grid", dest="lambda_grid")
        p.add_argument("--n-seeds", dest="n_seeds")
        p.add_argument("--threshold-policy", dest="threshold_policy")
    return parser


def dispatch(argv):
    """Run one subcommand; returns the process exit code."""
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        cfg = resolve_config(args)
        if args.dry_run:
            for key, value in format_config(cfg).items():
                print(f"{key}={value}")
            return 0
        return _COMMANDS[args.command](cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except SolverError as e:
        print(f"solver failure: {e}", file=sys.stderr)
        return 3


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()

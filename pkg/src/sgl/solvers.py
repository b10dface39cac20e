"""Iterative solvers sharing the sparse-group prox kernel.

Five solvers for the penalized least-squares objective: message passing with
the Onsager correction (amp), proximal gradient descent (ista), its
Nesterov-accelerated variant (fista), cyclic blockwise descent, and a damped
vector message-passing scheme for rotationally invariant designs (vamp).
Each returns a SolverTrace with per-iteration cost, optimization MSE and
cumulative wall-clock of the algorithmic work (metric bookkeeping excluded).
"""

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import cost as sgl_cost
from .model import make_partition
from .prox import prox_sgl, prox_sgl_jacobian_diag, soft_threshold

__all__ = [
    "SolverError",
    "StepSizeError",
    "NumericalDegeneracyError",
    "SEDriven",
    "EmpiricalTau",
    "FixedLambda",
    "SolverConfig",
    "SolverTrace",
    "spectral_norm",
    "default_step_size",
    "gram_frobenius_norm",
    "momentum_sequence",
    "subgradient_residual",
    "solve_amp",
    "solve_ista",
    "solve_fista",
    "solve_blockwise",
    "solve_vamp",
    "SOLVERS",
    "solve",
]


class SolverError(RuntimeError):
    pass


class StepSizeError(SolverError):
    pass


class NumericalDegeneracyError(SolverError):
    pass


@dataclass(frozen=True)
class SEDriven:
    """Threshold schedule theta_t = alpha * tau_t from a state-evolution run;
    the schedule's last value is reused once exhausted."""

    alpha: float
    taus: tuple

    @staticmethod
    def from_outcome(outcome):
        return SEDriven(alpha=outcome.alpha, taus=tuple(outcome.tau_schedule))


@dataclass(frozen=True)
class EmpiricalTau:
    """theta_t = alpha * ||z_t||_2 / sqrt(n): the residual norm estimates the
    effective noise level, so no prior knowledge is needed."""

    alpha: float


@dataclass(frozen=True)
class FixedLambda:
    """Per-step calibration to the instance's own lambda: the threshold is
    relaxed toward lambda + theta*<prox'>/delta, whose fixed point is the
    stationarity relation lambda = theta*(1 - <prox'>/delta), so the solver's
    stationary point minimizes the objective at exactly this lambda.  The
    relaxation factor breaks the period-2 threshold oscillation the undamped
    update exhibits."""

    theta0: Optional[float] = None
    relax: float = 0.3

    def __post_init__(self):
        if not 0.0 < self.relax <= 1.0:
            raise ValueError(f"relax must be in (0, 1], got {self.relax}")


@dataclass
class SolverConfig:
    max_iters: int = 500
    tol: float = 1e-8
    threshold_policy: object = None
    step_size: Optional[float] = None
    step_rule: str = "spectral"
    damping: float = 0.1
    mse_reference: Optional[np.ndarray] = None
    stop_at_opt_mse: Optional[float] = None

    def __post_init__(self):
        if self.tol <= 0.0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if not 0.0 <= self.damping < 1.0:
            raise ValueError(f"damping must be in [0, 1), got {self.damping}")
        if self.step_rule not in ("spectral", "frobenius"):
            raise ValueError(f"unknown step_rule {self.step_rule!r}")


@dataclass
class SolverTrace:
    records: list
    final_beta: np.ndarray
    converged: bool
    iters_used: int
    diagnostic: Optional[str] = None

    @property
    def costs(self):
        return np.array([r[1] for r in self.records])

    @property
    def opt_mses(self):
        return np.array(
            [r[2] if r[2] is not None else np.nan for r in self.records]
        )

    @property
    def final_cost(self):
        return self.records[-1][1]

    def iterations_to(self, target):
        """First recorded iteration whose opt MSE is <= target, or None."""
        for it, _, mse, _ in self.records:
            if mse is not None and mse <= target:
                return it
        return None


class _Recorder:
    """Per-iteration bookkeeping shared by every solver."""

    def __init__(self, instance, config):
        self.instance = instance
        self.config = config
        if config.mse_reference is not None:
            self.reference = np.asarray(config.mse_reference, dtype=float)
        elif instance.truth is not None:
            self.reference = instance.truth.beta0
        else:
            self.reference = None
        self.records = []
        self.elapsed_ns = 0

    def opt_mse(self, beta):
        if self.reference is None:
            return None
        diff = beta - self.reference
        return float(diff @ diff) / self.instance.p

    def record(self, it, beta, cost_value=None):
        c = sgl_cost(self.instance, beta) if cost_value is None else cost_value
        mse = self.opt_mse(beta)
        self.records.append((it, float(c), mse, self.elapsed_ns))
        return mse

    def should_stop(self, mse):
        return (
            self.config.stop_at_opt_mse is not None
            and mse is not None
            and mse <= self.config.stop_at_opt_mse
        )

    def trace(self, beta, converged, iters_used, diagnostic=None):
        return SolverTrace(
            records=self.records,
            final_beta=beta,
            converged=converged,
            iters_used=iters_used,
            diagnostic=diagnostic,
        )


def _rel_change(new, old):
    return float(np.linalg.norm(new - old)) / max(1.0, float(np.linalg.norm(old)))


def spectral_norm(x, n_iters=30, seed=0):
    """Largest singular value of x by power iteration on x^T x."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(x.shape[1])
    v /= np.linalg.norm(v)
    for _ in range(n_iters):
        w = x.T @ (x @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
    return float(np.linalg.norm(x @ v))


def default_step_size(x, rule="spectral"):
    """Gradient step for the least-squares term.

    "spectral": 0.95 / sigma_max(x)^2 with sigma_max from 30 power-iteration
    steps (the 0.95 safety factor covers the iteration's slight
    underestimate).  "frobenius": 1 / ||x||_F^2, a looser always-safe bound.
    """
    if rule == "spectral":
        return 0.95 / spectral_norm(x) ** 2
    return 1.0 / float(np.sum(x * x))


def gram_frobenius_norm(x):
    """||x^T x||_F, computed through the smaller of the two Gram matrices
    (tr((x^T x)^2) = tr((x x^T)^2))."""
    n, p = x.shape
    g = x @ x.T if n <= p else x.T @ x
    return float(np.linalg.norm(g, "fro"))


def momentum_sequence(k):
    """First k terms of the acceleration sequence d_1 = 1,
    d_{t+1} = (1 + sqrt(1 + 4 d_t^2)) / 2."""
    d = [1.0]
    while len(d) < k:
        d.append(0.5 * (1.0 + np.sqrt(1.0 + 4.0 * d[-1] ** 2)))
    return d


def subgradient_residual(instance, beta):
    """Max violation of the stationarity condition of the penalized objective.

    X^T(y - X beta) must be a subgradient of the penalty at beta: equality on
    nonzero coordinates of surviving groups, an l_inf box on their zeros, and
    a soft-thresholded-norm ball for zeroed groups.  Returns the largest
    absolute violation (0 at an exact minimizer).
    """
    x, y, lam, gamma = instance.design, instance.response, instance.lam, instance.gamma
    part = instance.partition
    g = x.T @ (y - x @ beta)
    worst = 0.0
    for l in range(part.n_groups):
        idx = part.index0 == l
        b_l, g_l = beta[idx], g[idx]
        w_l = part.weights[l]
        norm_b = np.linalg.norm(b_l)
        if norm_b > 0.0:
            nz = b_l != 0.0
            expected = lam * (gamma * np.sign(b_l[nz]) + (1.0 - gamma) * w_l * b_l[nz] / norm_b)
            worst = max(worst, float(np.max(np.abs(g_l[nz] - expected))))
            if (~nz).any():
                worst = max(worst, float(np.max(np.abs(g_l[~nz]))) - lam * gamma)
        else:
            slack = np.linalg.norm(soft_threshold(g_l, lam * gamma)) - lam * (1.0 - gamma) * w_l
            worst = max(worst, float(slack))
    return max(worst, 0.0)


def _policy_theta(policy, t, z, n, theta_state):
    if isinstance(policy, EmpiricalTau):
        return policy.alpha * float(np.linalg.norm(z)) / np.sqrt(n)
    if isinstance(policy, SEDriven):
        return policy.alpha * policy.taus[min(t, len(policy.taus) - 1)]
    return theta_state


def solve_amp(instance, config):
    """Message-passing iteration with the Onsager-corrected residual.

    beta <- prox(X^T z + beta, theta_t);
    z <- y - X beta + (1/delta) z <prox'(X^T z + beta, theta_t)>,
    started from beta = 0, z = y, with delta = n/p.  The threshold policy
    decides theta_t; the default calibrates to the instance's lambda at every
    step (FixedLambda).
    """
    x, y = instance.design, instance.response
    n, p = x.shape
    delta = n / p
    policy = config.threshold_policy or FixedLambda()
    theta_state = None
    if isinstance(policy, FixedLambda):
        theta_state = instance.lam if policy.theta0 is None else policy.theta0

    rec = _Recorder(instance, config)
    beta = np.zeros(p)
    z = y.copy()
    rec.record(0, beta)
    converged = False
    diagnostic = None
    t_used = 0
    for t in range(1, config.max_iters + 1):
        tic = time.perf_counter_ns()
        s = beta + x.T @ z
        theta = _policy_theta(policy, t - 1, z, n, theta_state)
        beta_new = prox_sgl(s, theta, instance.gamma, instance.partition)
        onsager = float(prox_sgl_jacobian_diag(s, theta, instance.gamma, instance.partition).mean())
        z = y - x @ beta_new + (1.0 / delta) * z * onsager
        if isinstance(policy, FixedLambda):
            theta_state = (1.0 - policy.relax) * theta + policy.relax * (
                instance.lam + (theta * onsager) / delta
            )
        rec.elapsed_ns += time.perf_counter_ns() - tic
        t_used = t
        if not (np.all(np.isfinite(beta_new)) and np.all(np.isfinite(z))):
            diagnostic = f"diverged: non-finite iterate at iteration {t}"
            beta = beta_new
            rec.records.append((t, float("inf"), None, rec.elapsed_ns))
            break
        change = _rel_change(beta_new, beta)
        beta = beta_new
        mse = rec.record(t, beta)
        if change < config.tol or rec.should_stop(mse):
            converged = True
            break
    return rec.trace(beta, converged and diagnostic is None, t_used, diagnostic)


def _check_monotone(cost_prev, cost_new, step, what):
    if cost_new > cost_prev + 1e-9 * max(1.0, abs(cost_prev)):
        raise StepSizeError(
            f"{what}: cost increased from {cost_prev:.6g} to {cost_new:.6g}; "
            f"step {step:.3g} too large, try {0.5 * step:.3g}"
        )


def solve_ista(instance, config):
    """Proximal gradient descent:
    beta <- prox(beta + s X^T(y - X beta), s*lambda).  The cost is
    non-increasing; an increase beyond round-off means the step exceeds the
    curvature bound and raises StepSizeError.
    """
    x, y = instance.design, instance.response
    p = x.shape[1]
    s = config.step_size or default_step_size(x, config.step_rule)
    rec = _Recorder(instance, config)
    beta = np.zeros(p)
    resid = y - x @ beta
    cost_prev = 0.5 * float(resid @ resid)
    rec.record(0, beta, cost_prev)
    converged = False
    t_used = 0
    for t in range(1, config.max_iters + 1):
        tic = time.perf_counter_ns()
        beta_new = prox_sgl(
            beta + s * (x.T @ resid), s * instance.lam, instance.gamma, instance.partition
        )
        resid = y - x @ beta_new
        rec.elapsed_ns += time.perf_counter_ns() - tic
        t_used = t
        cost_new = sgl_cost(instance, beta_new)
        _check_monotone(cost_prev, cost_new, s, "ista")
        cost_prev = cost_new
        change = _rel_change(beta_new, beta)
        beta = beta_new
        mse = rec.record(t, beta, cost_new)
        if change < config.tol or rec.should_stop(mse):
            converged = True
            break
    return rec.trace(beta, converged, t_used)


def solve_fista(instance, config):
    """Nesterov-accelerated proximal gradient: the prox step is applied at the
    extrapolated point M, with momentum weights from momentum_sequence."""
    x, y = instance.design, instance.response
    p = x.shape[1]
    s = config.step_size or default_step_size(x, config.step_rule)
    rec = _Recorder(instance, config)
    beta = np.zeros(p)
    m_point = beta.copy()
    d = 1.0
    rec.record(0, beta)
    converged = False
    t_used = 0
    for t in range(1, config.max_iters + 1):
        tic = time.perf_counter_ns()
        grad_step = m_point + s * (x.T @ (y - x @ m_point))
        beta_new = prox_sgl(grad_step, s * instance.lam, instance.gamma, instance.partition)
        d_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * d * d))
        m_point = beta_new + ((d - 1.0) / d_new) * (beta_new - beta)
        d = d_new
        rec.elapsed_ns += time.perf_counter_ns() - tic
        t_used = t
        if not np.all(np.isfinite(beta_new)):
            return rec.trace(
                beta_new, False, t_used, f"diverged: non-finite iterate at iteration {t}"
            )
        change = _rel_change(beta_new, beta)
        beta = beta_new
        mse = rec.record(t, beta)
        if change < config.tol or rec.should_stop(mse):
            converged = True
            break
    return rec.trace(beta, converged, t_used)


def solve_blockwise(instance, config):
    """Cyclic blockwise descent, one prox-gradient update per group.

    For each group in ascending id order the partial residual
    r = y - sum_{k != l} X_k beta_k is formed (an O(n p) full fit per group);
    the group is zeroed when ||soft(X_l^T r, gamma*lambda)||_2 <=
    (1-gamma)*lambda and otherwise updated through the single-group prox at
    step size s.  One iteration of the trace is one full sweep.
    """
    x, y = instance.design, instance.response
    part = instance.partition
    p = x.shape[1]
    s = config.step_size or default_step_size(x, config.step_rule)
    lam, gamma = instance.lam, instance.gamma
    group_idx = [np.flatnonzero(part.index0 == l) for l in range(part.n_groups)]
    sub_parts = [make_partition(np.ones(idx.size, dtype=int)) for idx in group_idx]

    rec = _Recorder(instance, config)
    beta = np.zeros(p)
    resid = y - x @ beta
    cost_prev = 0.5 * float(resid @ resid)
    rec.record(0, beta, cost_prev)
    converged = False
    t_used = 0
    for t in range(1, config.max_iters + 1):
        tic = time.perf_counter_ns()
        beta_old = beta.copy()
        for l, idx in enumerate(group_idx):
            x_l = x[:, idx]
            fit = x @ beta
            r_minus = y - fit + x_l @ beta[idx]
            if np.linalg.norm(soft_threshold(x_l.T @ r_minus, gamma * lam)) <= (1.0 - gamma) * lam:
                beta[idx] = 0.0
            else:
                v = beta[idx] + s * (x_l.T @ (y - fit))
                beta[idx] = prox_sgl(v, s * lam, gamma, sub_parts[l])
        rec.elapsed_ns += time.perf_counter_ns() - tic
        t_used = t
        cost_new = sgl_cost(instance, beta)
        _check_monotone(cost_prev, cost_new, s, "blockwise")
        cost_prev = cost_new
        change = _rel_change(beta, beta_old)
        mse = rec.record(t, beta, cost_new)
        if change < config.tol or rec.should_stop(mse):
            converged = True
            break
    return rec.trace(beta, converged, t_used)


class _RidgeSolver:
    """(X^T X + rho I)^{-1} applications and the trace of the inverse.

    Uses an economy SVD of X when many iterations are expected (rho changes
    every iteration but the SVD is shared); otherwise factors X^T X + rho I
    afresh per call.
    """

    def __init__(self, x, use_svd):
        self.p = x.shape[1]
        self.use_svd = use_svd
        if use_svd:
            _, sv, vt = np.linalg.svd(x, full_matrices=False)
            self.sv2 = sv**2
            self.v = vt.T
        else:
            self.gram = x.T @ x

    def apply(self, w, rho):
        """Returns ((X^T X + rho I)^{-1} w, tr((X^T X + rho I)^{-1}))."""
        if self.use_svd:
            d = self.sv2 + rho
            if np.min(d) <= 0.0 or rho <= 0.0:
                raise NumericalDegeneracyError(f"ridge precision rho={rho:.3g} not positive")
            proj = self.v.T @ w
            sol = self.v @ (proj / d) + (w - self.v @ proj) / rho
            tr = float(np.sum(1.0 / d) + (self.p - d.size) / rho)
            return sol, tr
        a = self.gram + rho * np.eye(self.p)
        try:
            np.linalg.cholesky(a)
        except np.linalg.LinAlgError as e:
            raise NumericalDegeneracyError(f"ridge matrix not PD at rho={rho:.3g}") from e
        inv = np.linalg.inv(a)
        return inv @ w, float(np.trace(inv))


def solve_vamp(instance, config):
    """Damped vector message passing for rotationally invariant designs.

    Alternates a ridge solve with the sparse-group prox denoiser, exchanging
    (u, rho) natural-parameter messages damped by factor (1 - damping):

        beta  = (X^T X + rho I)^{-1} (X^T y + u)
        sig_b = tr((X^T X + rho I)^{-1}) / p
        v     = (beta - sig_b u) / (1 - sig_b rho);  theta = lambda sig_b / (1 - sig_b rho)
        z     = prox(v, theta);  sig_z = <prox'(v, theta)> sig_b / (1 - sig_b rho)
        u    += (1 - damping) (z/sig_z - beta/sig_b)
        rho  += (1 - damping) (1/sig_z - 1/sig_b)

    A fixed point satisfies beta = prox(beta + s X^T(y - X beta), s*lambda)
    with s = sig_b/(1 - sig_b rho), i.e. minimizes the penalized objective.
    Raises NumericalDegeneracyError when 1 - sig_b*rho or sig_z collapses.
    """
    x, y = instance.design, instance.response
    p = x.shape[1]
    ridge = _RidgeSolver(x, use_svd=config.max_iters > 20)
    xty = x.T @ y
    keep = 1.0 - config.damping

    rec = _Recorder(instance, config)
    u = np.zeros(p)
    rho = 1.0
    z = np.zeros(p)
    rec.record(0, z)
    converged = False
    diagnostic = None
    t_used = 0
    for t in range(1, config.max_iters + 1):
        tic = time.perf_counter_ns()
        beta, tr = ridge.apply(xty + u, rho)
        sig_b = tr / p
        denom = 1.0 - sig_b * rho
        if denom <= 1e-12:
            raise NumericalDegeneracyError(
                f"1 - sig_b*rho = {denom:.3g} <= 1e-12 at iteration {t}"
            )
        v = (beta - sig_b * u) / denom
        theta = instance.lam * sig_b / denom
        z_new = prox_sgl(v, theta, instance.gamma, instance.partition)
        deriv = float(prox_sgl_jacobian_diag(v, theta, instance.gamma, instance.partition).mean())
        sig_z = sig_b / denom * deriv
        if sig_z <= 1e-14:
            raise NumericalDegeneracyError(
                f"denoiser variance collapsed (sig_z={sig_z:.3g}) at iteration {t}"
            )
        u = u + keep * (z_new / sig_z - beta / sig_b)
        rho = rho + keep * (1.0 / sig_z - 1.0 / sig_b)
        rec.elapsed_ns += time.perf_counter_ns() - tic
        t_used = t
        if not (np.all(np.isfinite(z_new)) and np.all(np.isfinite(u)) and np.isfinite(rho)):
            diagnostic = f"diverged: non-finite iterate at iteration {t}"
            z = z_new
            rec.records.append((t, float("inf"), None, rec.elapsed_ns))
            break
        change = _rel_change(z_new, z)
        z = z_new
        mse = rec.record(t, z)
        if change < config.tol or rec.should_stop(mse):
            converged = True
            break
    return rec.trace(z, converged and diagnostic is None, t_used, diagnostic)


SOLVERS = {
    "amp": solve_amp,
    "ista": solve_ista,
    "fista": solve_fista,
    "blockwise": solve_blockwise,
    "vamp": solve_vamp,
}


def solve(name, instance, config):
    """Dispatch to one of the named solvers."""
    try:
        fn = SOLVERS[name]
    except KeyError:
        raise ValueError(f"unknown solver {name!r}; choose from {sorted(SOLVERS)}") from None
    return fn(instance, config)

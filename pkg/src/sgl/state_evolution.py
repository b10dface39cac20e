"""State evolution, penalty calibration, and asymptotic performance predictors.

The effective-noise recursion tau_{t+1}^2 = F(tau_t^2, alpha*tau_t) tracks
the message-passing solver; its fixed point tau_star determines the
asymptotic MSE delta*(tau_star^2 - sigma_w^2) and, through the calibration
identity lambda = alpha*tau_star*(1 - <prox'>/delta), the penalty level the
threshold parameter alpha corresponds to.  Expectations over (signal, Z) are
evaluated by finite-size Monte Carlo with common random numbers: every
evaluation for the same parameter set reuses one frozen draw, so monotonicity
and concavity of F survive the noise.
"""

import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.special import ndtr

from .model import (
    BernoulliGaussian,
    PointMassMixture,
    PriorSpec,
    ZeroSignal,
    contiguous_partition,
)
from .prox import prox_sgl, prox_sgl_jacobian_diag

__all__ = [
    "SEParams",
    "SEOutcome",
    "t_func",
    "admissible_interval",
    "se_map",
    "se_fixed_point",
    "lambda_of_alpha",
    "alpha_of_lambda",
    "predict_metrics",
    "perfect_group_params",
    "mixed_group_params",
    "prox_limit_sample",
    "fdp_conditional_mc",
    "selection_rate_mc",
]

_PHI_NORM = 1.0 / np.sqrt(2.0 * np.pi)


def _phi(z):
    return _PHI_NORM * np.exp(-0.5 * z * z)


def t_func(z):
    """Second moment of the one-sided soft threshold of a standard Gaussian.

    t_func(z) = E[max(Z - z, 0)^2] = (1 + z^2) Phi(-z) - z phi(z).
    Strictly positive, strictly decreasing, and -> 0 as z -> +inf.
    """
    z = np.asarray(z, dtype=float)
    val = (1.0 + z * z) * ndtr(-z) - z * _phi(z)
    return float(val) if val.ndim == 0 else val


def _boundary_gap(alpha, gamma):
    """sqrt(2 T(gamma*alpha)) - (1-gamma)*alpha; its square is the large-tau
    slope of F times delta, so alpha is admissible iff gap^2 <= delta."""
    return np.sqrt(2.0 * t_func(gamma * alpha)) - (1.0 - gamma) * alpha


def _bisect(f, lo, hi, tol=1e-12, max_iter=200):
    """Root of a monotone-decreasing f on [lo, hi] with f(lo) >= 0 >= f(hi)."""
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if hi - lo < tol:
            return mid
        if f(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def admissible_interval(gamma, delta):
    """Interval of threshold parameters alpha with a unique attracting
    fixed point: {alpha >= 0 : (sqrt(2 T(gamma*alpha)) - (1-gamma)*alpha)^2 <= delta}.

    For gamma == 1 the interval is unbounded above and (alpha_min, inf) is
    returned.  The boundary function g(alpha) = sqrt(2T(gamma*alpha)) -
    (1-gamma)*alpha is strictly decreasing from g(0) = 1, so the interval
    endpoints are the bisection roots of g = +-sqrt(delta).
    """
    if delta <= 0.0:
        raise ValueError(f"delta must be positive, got {delta}")
    root_delta = np.sqrt(delta)

    if _boundary_gap(0.0, gamma) <= root_delta:
        alpha_min = 0.0
    else:
        hi = 1.0
        while _boundary_gap(hi, gamma) > root_delta:
            hi *= 2.0
        alpha_min = _bisect(lambda a: _boundary_gap(a, gamma) - root_delta, 0.0, hi)

    if gamma == 1.0:
        return alpha_min, np.inf
    hi = max(2.0 * alpha_min, 1.0)
    while _boundary_gap(hi, gamma) > -root_delta:
        hi *= 2.0
    alpha_max = _bisect(lambda a: _boundary_gap(a, gamma) + root_delta, alpha_min, hi)
    return alpha_min, alpha_max


@dataclass(frozen=True)
class SEParams:
    """Inputs of the scalar recursion.

    group_ratios are the asymptotic group-size fractions r_l (sum to 1).
    The expectation is approximated at finite size p_mc with group sizes
    floor(r_l * p_mc) (remainder to group 1) and mc_samples/p_mc independent
    replications, all drawn once from ``seed`` and reused across every
    evaluation (common random numbers).  ``group_priors``, when given,
    overrides the shared signal prior group by group.
    """

    gamma: float
    delta: float
    prior: PriorSpec
    group_ratios: tuple = (1.0,)
    mc_samples: int = 10_000
    seed: int = 0
    p_mc: int = 2000
    group_priors: Optional[tuple] = None

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.delta <= 0.0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if abs(sum(self.group_ratios) - 1.0) > 1e-12:
            raise ValueError(f"group_ratios must sum to 1, got {self.group_ratios}")
        if self.mc_samples < self.p_mc:
            raise ValueError("mc_samples must be at least p_mc")
        if self.group_priors is not None and len(self.group_priors) != len(
            self.group_ratios
        ):
            raise ValueError("group_priors must match group_ratios in length")

    @property
    def signal_priors(self):
        if self.group_priors is not None:
            return self.group_priors
        return tuple(self.prior.signal for _ in self.group_ratios)

    @property
    def signal_second_moment(self):
        sizes = _mc_sizes(self.group_ratios, self.p_mc)
        return sum(
            sz / self.p_mc * pr.second_moment
            for sz, pr in zip(sizes, self.signal_priors)
        )

    @property
    def nonzero_prob(self):
        sizes = _mc_sizes(self.group_ratios, self.p_mc)
        return sum(
            sz / self.p_mc * pr.nonzero_prob
            for sz, pr in zip(sizes, self.signal_priors)
        )


def _mc_sizes(ratios, p_mc):
    sizes = [int(np.floor(r * p_mc)) for r in ratios]
    sizes[0] += p_mc - sum(sizes)
    if min(sizes) < 1:
        raise ValueError(f"group_ratios {ratios} leave an empty group at p_mc={p_mc}")
    return tuple(sizes)


@lru_cache(maxsize=64)
def _draws(params):
    """Frozen (signal, Z) replications and the finite partition for params."""
    sizes = _mc_sizes(params.group_ratios, params.p_mc)
    partition = contiguous_partition(sizes)
    n_rep = max(1, int(round(params.mc_samples / params.p_mc)))
    rng = np.random.default_rng(params.seed)
    pi = np.empty((n_rep, params.p_mc))
    start = 0
    for sz, prior in zip(sizes, params.signal_priors):
        pi[:, start : start + sz] = prior.sample(rng, (n_rep, sz))
        start += sz
    z = rng.standard_normal((n_rep, params.p_mc))
    pi.setflags(write=False)
    z.setflags(write=False)
    return pi, z, partition


def _se_map_stats(tau_sq, alpha, params):
    """Mean and standard error of the Monte Carlo estimate of F."""
    pi, z, partition = _draws(params)
    tau = np.sqrt(max(tau_sq, 0.0))
    theta = alpha * tau
    per_rep = np.empty(pi.shape[0])
    for i in range(pi.shape[0]):
        diff = prox_sgl(pi[i] + tau * z[i], theta, params.gamma, partition) - pi[i]
        per_rep[i] = diff @ diff / (params.delta * params.p_mc)
    mean = params.prior.noise_sd**2 + per_rep.mean()
    stderr = per_rep.std(ddof=1) / np.sqrt(len(per_rep)) if len(per_rep) > 1 else 0.0
    return mean, stderr


def se_map(tau_sq, alpha, params):
    """Monte Carlo estimate of F(tau^2, alpha*tau) =
    sigma_w^2 + E||prox(signal + tau Z, alpha*tau) - signal||^2 / (delta p)."""
    if tau_sq < 0.0:
        raise ValueError(f"tau_sq must be nonnegative, got {tau_sq}")
    if alpha < 0.0:
        raise ValueError(f"alpha must be nonnegative, got {alpha}")
    return _se_map_stats(tau_sq, alpha, params)[0]


def _avg_prox_derivative(tau, alpha, params):
    pi, z, partition = _draws(params)
    theta = alpha * tau
    vals = [
        prox_sgl_jacobian_diag(pi[i] + tau * z[i], theta, params.gamma, partition).mean()
        for i in range(pi.shape[0])
    ]
    return float(np.mean(vals))


@dataclass
class SEOutcome:
    """Fixed point of the recursion and everything predicted from it.

    Fields not yet computed by the producing operation are None; see
    :func:`se_fixed_point` (tau fields), :func:`lambda_of_alpha` and
    :func:`predict_metrics` (remaining fields).
    """

    alpha: float
    tau_star: float
    lam: Optional[float] = None
    predicted_mse: Optional[float] = None
    tpp_inf: Optional[float] = None
    fdp_inf: Optional[float] = None
    tau_schedule: np.ndarray = field(default_factory=lambda: np.empty(0))

    def as_dict(self):
        return {
            "alpha": self.alpha,
            "tau_star": self.tau_star,
            "lambda": self.lam,
            "predicted_mse": self.predicted_mse,
            "tpp_inf": self.tpp_inf,
            "fdp_inf": self.fdp_inf,
        }


_TAU_SQ_CAP = 1e14


def se_fixed_point(alpha, params, tol=1e-9, max_iter=1000):
    """Iterate the recursion to its fixed point and record the schedule.

    Starts from tau_0^2 = sigma_w^2 + E[signal^2]/delta and stops when the
    change drops below tol*max(1, tau^2).  Persistent sign-alternating
    increments larger than 3 Monte Carlo standard errors raise, advising a
    larger mc_samples; runaway growth (alpha below the admissible interval)
    is reported as divergence.
    """
    alpha_min, alpha_max = admissible_interval(params.gamma, params.delta)
    if alpha > alpha_max:
        warnings.warn(
            f"alpha={alpha:.4g} above the admissible interval "
            f"[{alpha_min:.4g}, {alpha_max:.4g}]; the recursion still "
            "converges but the estimator is fully shrunk",
            stacklevel=2,
        )
    tau_sq = params.prior.noise_sd**2 + params.signal_second_moment / params.delta
    schedule = [np.sqrt(tau_sq)]
    increments = []
    stderr = 0.0
    for _ in range(max_iter):
        new_tau_sq, stderr = _se_map_stats(tau_sq, alpha, params)
        increments.append(new_tau_sq - tau_sq)
        schedule.append(np.sqrt(new_tau_sq))
        done = abs(new_tau_sq - tau_sq) < tol * max(1.0, tau_sq)
        tau_sq = new_tau_sq
        if done:
            break
        if tau_sq > _TAU_SQ_CAP:
            warnings.warn(
                f"state evolution diverges at alpha={alpha:.4g} "
                f"(below admissible minimum {alpha_min:.4g}?)",
                stacklevel=2,
            )
            break
        if len(increments) >= 8:
            last = increments[-8:]
            alternating = all(a * b < 0.0 for a, b in zip(last, last[1:]))
            if alternating and max(abs(v) for v in last) > 3.0 * stderr:
                raise RuntimeError(
                    "state-evolution iteration oscillates beyond Monte Carlo "
                    "noise; increase mc_samples"
                )
    tau_star = np.sqrt(tau_sq)
    return SEOutcome(
        alpha=alpha,
        tau_star=tau_star,
        predicted_mse=params.delta * (tau_sq - params.prior.noise_sd**2),
        tau_schedule=np.asarray(schedule),
    )


def lambda_of_alpha(alpha, params, outcome=None):
    """Penalty level paired with alpha:
    lambda = alpha*tau_star*(1 - <prox'(signal + tau_star Z, alpha tau_star)>/delta).
    """
    if outcome is None:
        outcome = se_fixed_point(alpha, params)
    tau = outcome.tau_star
    if tau == 0.0:
        return 0.0
    deriv = _avg_prox_derivative(tau, alpha, params)
    return alpha * tau * (1.0 - deriv / params.delta)


def alpha_of_lambda(lam, params, tol=1e-4):
    """Invert the calibration by bisection over the admissible interval.

    lambda(alpha) is continuous and non-decreasing, running from -inf at the
    lower endpoint to lambda_max at the upper endpoint, so any
    lam < lambda_max has a unique preimage.  Raises ValueError (naming
    lambda_max) when lam is out of range.
    """
    alpha_min, alpha_max = admissible_interval(params.gamma, params.delta)
    if np.isinf(alpha_max):
        hi = max(2.0 * alpha_min, 2.0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            while lambda_of_alpha(hi, params) < lam:
                hi *= 2.0
                if hi > 1e6:
                    raise ValueError(f"lambda={lam} unreachable (alpha > 1e6)")
    else:
        margin = 1e-6 * max(1.0, alpha_max - alpha_min)
        hi = alpha_max - margin
        lam_max = lambda_of_alpha(hi, params)
        # equality is kept so the degenerate all-zero setting (lambda_max = 0)
        # resolves to the upper interval edge
        if lam > lam_max:
            raise ValueError(
                f"lambda={lam} is above lambda_max~={lam_max:.6g} "
                "for these parameters"
            )
    lo = alpha_min
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if lambda_of_alpha(mid, params) < lam:
                lo = mid
            else:
                hi = mid
    return 0.5 * (lo + hi)


def _signal_dist(params):
    """Mixture description of the nonzero signal values: (weights, priors)."""
    sizes = _mc_sizes(params.group_ratios, params.p_mc)
    weights, priors = [], []
    for sz, prior in zip(sizes, params.signal_priors):
        w = sz / params.p_mc * prior.nonzero_prob
        if w > 0.0:
            weights.append(w)
            priors.append(prior)
    total = sum(weights)
    return [w / total for w in weights] if total > 0 else [], priors


def _tpp_inf(alpha, tau, params):
    """P(|signal* + tau Z| > gamma*alpha*tau) over nonzero signals."""
    weights, priors = _signal_dist(params)
    if not weights:
        return float("nan")
    if tau == 0.0:
        return 1.0
    c = params.gamma * alpha * tau
    total = 0.0
    rng = np.random.default_rng(params.seed + 1)
    for w, prior in zip(weights, priors):
        if isinstance(prior, PointMassMixture):
            m = prior.value
            total += w * (ndtr((m - c) / tau) + ndtr((-m - c) / tau))
        else:
            # Monte Carlo over the conditional nonzero distribution
            if isinstance(prior, BernoulliGaussian):
                vals = rng.normal(0.0, prior.sd, params.mc_samples)
            else:
                raise TypeError(f"unsupported signal prior {type(prior).__name__}")
            hits = np.abs(vals + tau * rng.standard_normal(params.mc_samples)) > c
            total += w * hits.mean()
    return total


def predict_metrics(alpha, params, outcome=None):
    """Asymptotic MSE, true-positive and false-discovery proportions.

    MSE = delta*(tau_star^2 - sigma_w^2); TPP uses the soft-threshold
    selection event |signal* + tau_star Z| > gamma*alpha*tau_star (Gaussian
    tails for point-mass priors, Monte Carlo otherwise); FDP combines it with
    the null selection rate 2*Phi(-gamma*alpha).  An all-zero signal prior
    makes TPP undefined (NaN) and FDP 1 whenever any discovery is predicted.
    """
    if outcome is None:
        outcome = se_fixed_point(alpha, params)
    out = SEOutcome(
        alpha=alpha,
        tau_star=outcome.tau_star,
        lam=lambda_of_alpha(alpha, params, outcome=outcome),
        predicted_mse=outcome.predicted_mse,
        tau_schedule=outcome.tau_schedule,
    )
    eps = params.nonzero_prob
    null_rate = 2.0 * ndtr(-params.gamma * alpha)
    if eps == 0.0:
        out.tpp_inf = float("nan")
        out.fdp_inf = 1.0 if null_rate > 0.0 else 0.0
        return out
    tpp = _tpp_inf(alpha, out.tau_star, params)
    denom = 2.0 * (1.0 - eps) * ndtr(-params.gamma * alpha) + eps * tpp
    out.tpp_inf = tpp
    out.fdp_inf = 2.0 * (1.0 - eps) * ndtr(-params.gamma * alpha) / denom if denom > 0 else 0.0
    return out


def perfect_group_params(prior, gamma, delta, signal_fraction=None, **kwargs):
    """SEParams for the two-group layout with every signal in group 1.

    ``signal_fraction`` is the asymptotic size of group 1 (defaults to the
    prior's nonzero probability, the exact-capacity layout); the group-1
    conditional prior is the base prior rescaled to nonzero probability
    eps/signal_fraction and group 2 is identically zero.
    """
    eps = prior.signal.nonzero_prob
    if eps <= 0.0:
        raise ValueError("perfect grouping needs a prior with nonzero signals")
    r1 = eps if signal_fraction is None else signal_fraction
    if not eps <= r1 < 1.0:
        raise ValueError(f"signal_fraction must lie in [{eps}, 1), got {r1}")
    base = prior.signal
    if isinstance(base, PointMassMixture):
        g1 = PointMassMixture(eps / r1, base.value)
    elif isinstance(base, BernoulliGaussian):
        g1 = BernoulliGaussian(eps / r1, base.sd)
    else:
        raise TypeError(f"unsupported signal prior {type(base).__name__}")
    return SEParams(
        gamma=gamma,
        delta=delta,
        prior=prior,
        group_ratios=(r1, 1.0 - r1),
        group_priors=(g1, ZeroSignal()),
        **kwargs,
    )


def mixed_group_params(prior, gamma, delta, **kwargs):
    """SEParams for the single-group (no group information) layout."""
    return SEParams(gamma=gamma, delta=delta, prior=prior, group_ratios=(1.0,), **kwargs)


def prox_limit_sample(alpha, tau, params, seed=None):
    """Samples of prox(signal + tau Z, alpha*tau) in the frozen group layout.

    Used for quantile-quantile comparison against an empirical solution; a
    fresh seed (default params.seed + 2) keeps these draws independent of
    the fixed-point evaluations.
    """
    sizes = _mc_sizes(params.group_ratios, params.p_mc)
    partition = contiguous_partition(sizes)
    n_rep = max(1, int(round(params.mc_samples / params.p_mc)))
    rng = np.random.default_rng(params.seed + 2 if seed is None else seed)
    out = []
    for _ in range(n_rep):
        pi = np.empty(params.p_mc)
        start = 0
        for sz, prior in zip(sizes, params.signal_priors):
            pi[start : start + sz] = prior.sample(rng, sz)
            start += sz
        s = pi + tau * rng.standard_normal(params.p_mc)
        out.append(prox_sgl(s, alpha * tau, params.gamma, partition))
    return np.concatenate(out)


def fdp_conditional_mc(alpha, params, outcome=None):
    """Monte Carlo estimate of P(signal = 0 | soft-threshold selection).

    The closed-form ratio in :func:`predict_metrics` is this conditional
    probability; the two agree within Monte Carlo error.
    """
    if outcome is None:
        outcome = se_fixed_point(alpha, params)
    pi, z, _ = _draws(params)
    tau = outcome.tau_star
    c = params.gamma * alpha * tau
    selected = np.abs(pi + tau * z) > c
    if not selected.any():
        return 0.0
    return float((selected & (pi == 0.0)).sum() / selected.sum())


def selection_rate_mc(alpha, params, outcome=None):
    """Fraction of true signals kept nonzero by the full prox (group kill
    included), against which the soft-threshold-only TPP formula can be
    compared."""
    if outcome is None:
        outcome = se_fixed_point(alpha, params)
    pi, z, partition = _draws(params)
    tau = outcome.tau_star
    theta = alpha * tau
    kept = 0
    signals = 0
    for i in range(pi.shape[0]):
        out = prox_sgl(pi[i] + tau * z[i], theta, params.gamma, partition)
        mask = pi[i] != 0.0
        signals += mask.sum()
        kept += (out[mask] != 0.0).sum()
    return kept / signals if signals else float("nan")

"""Problem representation: group partitions, priors, designs, instances.

A problem instance is the linear model y = X beta0 + w together with the
sparse-group penalty level (lambda, gamma) and the group partition.  All
containers are frozen dataclasses; generation is a pure function of the
specs and a seed.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .prox import _group_norms

__all__ = [
    "GroupPartition",
    "SignalPrior",
    "PointMassMixture",
    "BernoulliGaussian",
    "ZeroSignal",
    "PriorSpec",
    "DesignSpec",
    "Truth",
    "ProblemInstance",
    "make_partition",
    "contiguous_partition",
    "penalty",
    "cost",
    "generate_instance",
]


@dataclass(frozen=True)
class GroupPartition:
    """Group membership of the p coordinates.

    membership holds group ids in 1..L; sizes[l-1] counts the members of
    group l; weights are sqrt(sizes).  ``original_labels`` records the label
    each contiguous id 1..L replaced, so relabelled partitions round-trip.
    """

    membership: np.ndarray
    sizes: np.ndarray
    weights: np.ndarray
    original_labels: np.ndarray
    index0: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        object.__setattr__(self, "index0", self.membership - 1)
        for name in ("membership", "sizes", "weights", "original_labels", "index0"):
            getattr(self, name).setflags(write=False)

    @property
    def p(self):
        return self.membership.shape[0]

    @property
    def n_groups(self):
        return self.sizes.shape[0]


def make_partition(membership):
    """Build a GroupPartition from an integer membership vector.

    Labels are relabelled to the contiguous set 1..L in order of first
    appearance; the original labels are recorded for round-tripping.
    """
    membership = np.asarray(membership, dtype=np.int64).ravel()
    if membership.size == 0:
        raise ValueError("membership vector is empty")
    original, index0 = np.unique(membership, return_inverse=True)
    # np.unique sorts labels; relabel in order of first appearance instead
    first_pos = np.full(original.size, membership.size, dtype=np.int64)
    np.minimum.at(first_pos, index0, np.arange(membership.size))
    order = np.argsort(first_pos, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    new_membership = rank[index0] + 1
    sizes = np.bincount(new_membership - 1, minlength=original.size)
    assert np.all(sizes >= 1), "empty group after relabelling"
    return GroupPartition(
        membership=new_membership,
        sizes=sizes.astype(np.int64),
        weights=np.sqrt(sizes.astype(float)),
        original_labels=original[order],
    )


def contiguous_partition(sizes):
    """Partition with the given group sizes laid out contiguously."""
    sizes = np.asarray(sizes, dtype=np.int64)
    return make_partition(np.repeat(np.arange(1, sizes.size + 1), sizes))


class SignalPrior:
    """Base class for the signal-entry distribution."""

    def sample(self, rng, size):
        raise NotImplementedError

    @property
    def second_moment(self):
        raise NotImplementedError

    @property
    def nonzero_prob(self):
        raise NotImplementedError


@dataclass(frozen=True)
class PointMassMixture(SignalPrior):
    """Entry equals ``value`` with probability eps, else 0."""

    eps: float
    value: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.eps <= 1.0:
            raise ValueError(f"eps must be in [0, 1], got {self.eps}")

    def sample(self, rng, size):
        return np.where(rng.random(size) < self.eps, self.value, 0.0)

    @property
    def second_moment(self):
        return self.eps * self.value**2

    @property
    def nonzero_prob(self):
        return self.eps if self.value != 0.0 else 0.0


@dataclass(frozen=True)
class BernoulliGaussian(SignalPrior):
    """Entry is N(0, sd^2) with probability eps, else 0."""

    eps: float
    sd: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.eps <= 1.0:
            raise ValueError(f"eps must be in [0, 1], got {self.eps}")

    def sample(self, rng, size):
        mask = rng.random(size) < self.eps
        return np.where(mask, rng.normal(0.0, self.sd, size), 0.0)

    @property
    def second_moment(self):
        return self.eps * self.sd**2

    @property
    def nonzero_prob(self):
        return self.eps if self.sd > 0.0 else 0.0


@dataclass(frozen=True)
class ZeroSignal(SignalPrior):
    """All entries identically zero."""

    def sample(self, rng, size):
        return np.zeros(size)

    @property
    def second_moment(self):
        return 0.0

    @property
    def nonzero_prob(self):
        return 0.0


@dataclass(frozen=True)
class PriorSpec:
    """Distribution of the signal entries and the noise level sigma_w."""

    signal: SignalPrior
    noise_sd: float = 0.0

    def __post_init__(self):
        if self.noise_sd < 0.0:
            raise ValueError(f"noise_sd must be nonnegative, got {self.noise_sd}")


DESIGN_KINDS = ("gaussian", "bernoulli", "shifted_exp", "rotinv")


@dataclass(frozen=True)
class DesignSpec:
    """Random design family, scaled so entries have variance 1/n.

    kind:
      gaussian     iid N(0, 1/n)
      bernoulli    iid +-1/sqrt(n) with equal probability
      shifted_exp  iid (E - 1)/sqrt(n) with E standard exponential
                   (mean 0, variance 1/n, support x >= -1/sqrt(n))
      rotinv       U diag(s) V^T with Haar U, V and log-spaced singular
                   values spanning ``condition_number``, normalized so the
                   squared Frobenius norm equals p.
    """

    kind: str
    n: int
    p: int
    condition_number: float = 1.0

    def __post_init__(self):
        if self.kind not in DESIGN_KINDS:
            raise ValueError(f"unknown design kind {self.kind!r}; choose from {DESIGN_KINDS}")
        if self.n <= 0 or self.p <= 0:
            raise ValueError("n and p must be positive")
        if self.condition_number < 1.0:
            raise ValueError(f"condition_number must be >= 1, got {self.condition_number}")

    @property
    def delta(self):
        return self.n / self.p


def _haar_orthogonal(rng, k):
    """Haar-distributed k x k orthogonal matrix via sign-fixed QR."""
    q, r = np.linalg.qr(rng.standard_normal((k, k)))
    return q * np.sign(np.diag(r))


def sample_design(spec, rng):
    """Draw a design matrix according to ``spec``."""
    n, p = spec.n, spec.p
    root_n = np.sqrt(n)
    if spec.kind == "gaussian":
        return rng.standard_normal((n, p)) / root_n
    if spec.kind == "bernoulli":
        return np.where(rng.random((n, p)) < 0.5, 1.0, -1.0) / root_n
    if spec.kind == "shifted_exp":
        # inverse-CDF exponential sample, shifted to mean 0
        expo = -np.log1p(-rng.random((n, p)))
        return (expo - 1.0) / root_n
    # rotationally invariant: singular values geometrically spaced over the
    # requested condition number, sum of squares normalized to p
    m = min(n, p)
    if spec.condition_number == 1.0:
        s = np.ones(m)
    else:
        s = np.geomspace(1.0, spec.condition_number, m)
    s *= np.sqrt(p / np.sum(s**2))
    u = _haar_orthogonal(rng, n)[:, :m]
    v = _haar_orthogonal(rng, p)[:, :m]
    return (u * s) @ v.T


@dataclass(frozen=True)
class Truth:
    beta0: np.ndarray
    noise: np.ndarray


@dataclass(frozen=True)
class ProblemInstance:
    """Design, response, partition and penalty; truth kept when synthetic."""

    design: np.ndarray
    response: np.ndarray
    partition: GroupPartition
    lam: float
    gamma: float
    truth: Optional[Truth] = None

    def __post_init__(self):
        n, p = self.design.shape
        if self.response.shape != (n,):
            raise ValueError(
                f"response has shape {self.response.shape}, expected ({n},)"
            )
        if self.partition.p != p:
            raise ValueError(
                f"partition covers {self.partition.p} coordinates, design has {p}"
            )
        if self.lam < 0.0:
            raise ValueError(f"lambda must be nonnegative, got {self.lam}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")

    @property
    def n(self):
        return self.design.shape[0]

    @property
    def p(self):
        return self.design.shape[1]

    @property
    def delta(self):
        return self.n / self.p


def penalty(beta, lam, gamma, partition):
    """(1-gamma)*lam*sum_l sqrt(p_l)*||beta_l||_2 + gamma*lam*||beta||_1."""
    beta = np.asarray(beta, dtype=float)
    group_term = float(np.dot(partition.weights, _group_norms(beta, partition)))
    return (1.0 - gamma) * lam * group_term + gamma * lam * float(np.sum(np.abs(beta)))


def cost(instance, beta):
    """0.5*||y - X beta||^2 plus the sparse-group penalty."""
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (instance.p,):
        raise ValueError(f"beta has shape {beta.shape}, expected ({instance.p},)")
    resid = instance.response - instance.design @ beta
    return 0.5 * float(resid @ resid) + penalty(
        beta, instance.lam, instance.gamma, instance.partition
    )


GROUP_MODES = ("perfect", "mixed")


def generate_instance(design, prior, partition, lam, gamma, group_mode="mixed", seed=0):
    """Draw a synthetic instance; deterministic given ``seed``.

    group_mode "perfect" requires a two-group partition and permutes the
    signal so its support occupies leading slots of group 1 (error if the
    support exceeds the group-1 capacity).  "mixed" leaves the iid draw in
    place; with a single group this is the no-group-information setting, and
    any other partition passes through unchanged.
    """
    if group_mode not in GROUP_MODES:
        raise ValueError(f"unknown group_mode {group_mode!r}; choose from {GROUP_MODES}")
    if partition.p != design.p:
        raise ValueError(
            f"partition covers {partition.p} coordinates, design.p = {design.p}"
        )
    rng = np.random.default_rng(seed)
    x = sample_design(design, rng)
    beta0 = prior.signal.sample(rng, design.p)
    if group_mode == "perfect":
        if partition.n_groups != 2:
            raise ValueError("perfect group mode needs exactly two groups")
        support = np.flatnonzero(beta0)
        capacity = int(partition.sizes[0])
        if support.size > capacity:
            raise ValueError(
                f"signal support ({support.size}) exceeds group-1 capacity ({capacity})"
            )
        rearranged = np.zeros_like(beta0)
        slots = np.flatnonzero(partition.membership == 1)[: support.size]
        rearranged[slots] = beta0[support]
        beta0 = rearranged
    noise = (
        rng.normal(0.0, prior.noise_sd, design.n)
        if prior.noise_sd > 0.0
        else np.zeros(design.n)
    )
    response = x @ beta0 + noise
    return ProblemInstance(
        design=x,
        response=response,
        partition=partition,
        lam=lam,
        gamma=gamma,
        truth=Truth(beta0=beta0, noise=noise),
    )

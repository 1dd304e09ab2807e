"""Information-theoretic core: entropies, Bernoulli divergences, Fano
bounds with their slack decomposition, and Wilson score intervals.

Every information quantity in this module is a plain float measured in
nats. Conversion to bits happens only at the reporting boundary (see
:mod:`routing_audit.report`). Divergences may be ``math.inf`` when the
reference distribution puts zero mass where the argument does not; such
values are explicit and must never be folded into sums or means without
an ``isfinite`` check.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from statistics import NormalDist
from typing import Iterable

import numpy as np

from .errors import DomainError, DpiViolationWarning

Nats = float
Probability = float

__all__ = [
    "Nats",
    "Probability",
    "JointDistribution",
    "SlackDecomposition",
    "WilsonInterval",
    "entropy",
    "binary_entropy",
    "kl_bernoulli",
    "bits_to_trust",
    "mutual_information",
    "fano_lower_bound",
    "fano_invert",
    "slack_decompose",
    "routing_efficiency",
    "wilson_interval",
]

_NORMALIZATION_TOL = 1e-12
# Bisection for fano_invert stops when the bound is matched this closely.
_INVERT_TOL = 1e-12
_INVERT_MAX_ITER = 200


def _check_probability(name: str, p: float) -> float:
    p = float(p)
    if math.isnan(p) or not 0.0 <= p <= 1.0:
        raise DomainError(f"{name} must lie in [0, 1], got {p!r}")
    return p


def entropy(dist: Iterable[float]) -> Nats:
    """Shannon entropy of a finite distribution, in nats.

    Zero-mass outcomes contribute nothing (0 ln 0 = 0). The vector must be
    nonnegative and sum to 1 within 1e-12.
    """
    p = np.asarray(list(dist) if not isinstance(dist, np.ndarray) else dist, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise DomainError("entropy expects a nonempty 1-d distribution")
    if np.any(np.isnan(p)) or np.any(p < 0):
        raise DomainError("distribution entries must be nonnegative")
    if abs(float(p.sum()) - 1.0) > _NORMALIZATION_TOL:
        raise DomainError(f"distribution sums to {p.sum()!r}, not 1")
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def binary_entropy(p: Probability) -> Nats:
    """h(p) = -p ln p - (1-p) ln(1-p), with h(0) = h(1) = 0.

    >>> round(binary_entropy(0.745), 5)
    0.56776
    """
    p = _check_probability("p", p)
    if p in (0.0, 1.0):
        return 0.0
    return -p * math.log(p) - (1.0 - p) * math.log1p(-p)


def kl_bernoulli(p: Probability, q: Probability) -> Nats:
    """KL(Ber(p) || Ber(q)) in nats.

    Returns ``math.inf`` when q is degenerate (0 or 1) and p disagrees
    with it; callers aggregating divergences must treat that case
    explicitly. Identical arguments give exactly 0.0.
    """
    p = _check_probability("p", p)
    q = _check_probability("q", q)
    if p == q:
        return 0.0
    if q in (0.0, 1.0):
        return math.inf
    out = 0.0
    if p > 0.0:
        out += p * math.log(p / q)
    if p < 1.0:
        out += (1.0 - p) * math.log((1.0 - p) / (1.0 - q))
    return out


def bits_to_trust(p_post: Probability, p_prior: Probability) -> Nats:
    """Evidence required to move a Bernoulli belief from p_prior to p_post.

    This is exactly ``kl_bernoulli(p_post, p_prior)``; the alias exists
    because budget certificates talk about trust moves, not divergences.
    """
    return kl_bernoulli(p_post, p_prior)


class JointDistribution:
    """Immutable joint distribution over a pair of finite alphabets.

    Rows index the first variable (V), columns the second (Y). The matrix
    must be nonnegative and sum to 1 within 1e-12.
    """

    __slots__ = ("p",)

    def __init__(self, p: np.ndarray):
        p = np.array(p, dtype=float, copy=True)
        if p.ndim != 2 or p.size == 0:
            raise DomainError("joint distribution must be a nonempty 2-d array")
        if np.any(np.isnan(p)) or np.any(p < 0):
            raise DomainError("joint entries must be nonnegative")
        if abs(float(p.sum()) - 1.0) > _NORMALIZATION_TOL:
            raise DomainError(f"joint sums to {p.sum()!r}, not 1")
        p.setflags(write=False)
        self.p = p

    @classmethod
    def from_channel(cls, prior: Iterable[float], matrix: np.ndarray) -> "JointDistribution":
        """Joint induced by a prior on rows and a row-stochastic channel."""
        prior_arr = np.asarray(list(prior) if not isinstance(prior, np.ndarray) else prior, dtype=float)
        m = np.asarray(matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != prior_arr.shape[0]:
            raise DomainError("channel rows must match the prior's support")
        return cls(prior_arr[:, None] * m)

    @property
    def shape(self) -> tuple[int, int]:
        return self.p.shape  # type: ignore[return-value]

    def row_marginal(self) -> np.ndarray:
        return self.p.sum(axis=1)

    def col_marginal(self) -> np.ndarray:
        return self.p.sum(axis=0)

    def __repr__(self) -> str:
        return f"JointDistribution(shape={self.p.shape})"


def mutual_information(joint: "JointDistribution | np.ndarray") -> Nats:
    """I(V;Y) of a joint distribution, in nats. Always >= 0 up to roundoff."""
    j = joint.p if isinstance(joint, JointDistribution) else JointDistribution(np.asarray(joint)).p
    pv = j.sum(axis=1, keepdims=True)
    py = j.sum(axis=0, keepdims=True)
    mask = j > 0
    prod = pv @ py
    out = float((j[mask] * np.log(j[mask] / prod[mask])).sum())
    # Exact-independence roundoff can land a hair below zero.
    return max(out, 0.0)


def _phi_raw(m: int, epsilon: float) -> float:
    # ln M - h(eps) - eps ln(M-1), with no domain restriction or clamping.
    # Valid as an algebraic quantity on all of [0, 1]; it is the Fano lower
    # bound only for eps <= 1 - 1/M, and may be negative past that point.
    return math.log(m) - binary_entropy(epsilon) - epsilon * math.log(m - 1)


def _check_m(m: int) -> int:
    if not isinstance(m, (int, np.integer)) or isinstance(m, bool) or m < 2:
        raise DomainError(f"alphabet size M must be an integer >= 2, got {m!r}")
    return int(m)


def fano_lower_bound(m: int, epsilon: float) -> Nats:
    """Minimum mutual information forced by answering correctly with error
    rate ``epsilon`` over ``m`` uniformly distributed values.

    Phi_M(eps) = ln M - h(eps) - eps ln(M-1), clamped below at 0.

    Domain: 0 <= epsilon <= 1 - 1/M. Beyond that error rate the bound
    carries no information and callers should use the clamped conversion
    in :func:`routing_audit.stages.mi_bound_from_cand_acc` instead.

    >>> round(fano_lower_bound(50, 0.745), 3)
    0.445
    """
    m = _check_m(m)
    epsilon = _check_probability("epsilon", epsilon)
    limit = 1.0 - 1.0 / m
    if epsilon > limit:
        raise DomainError(
            f"epsilon={epsilon} exceeds 1 - 1/M = {limit}; the Fano bound is undefined there"
        )
    return max(0.0, _phi_raw(m, epsilon))


def fano_invert(m: int, info: Nats) -> Probability:
    """Largest error rate compatible with mutual information ``info``.

    Inverts Phi_M by bisection on [0, 1 - 1/M], where Phi_M is strictly
    decreasing from ln M to 0. Stops once |Phi_M(eps) - info| <= 1e-12,
    with a hard cap of 200 iterations.

    >>> fano_invert(50, 0.0)
    0.98
    """
    m = _check_m(m)
    info = float(info)
    if math.isnan(info) or info < 0.0:
        raise DomainError(f"info must be a nonnegative number of nats, got {info!r}")
    if info > math.log(m):
        raise DomainError(f"info={info} exceeds ln M = {math.log(m)}; no error rate attains it")
    lo, hi = 0.0, 1.0 - 1.0 / m
    if info == 0.0:
        return hi
    for _ in range(_INVERT_MAX_ITER):
        mid = 0.5 * (lo + hi)
        val = _phi_raw(m, mid)
        if abs(val - info) <= _INVERT_TOL:
            return mid
        if val > info:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True, slots=True)
class SlackDecomposition:
    """Exact split of I(V;Y) into the Fano bound plus two nonnegative slacks.

    ``fano_term`` is ln M - h(eps) - eps ln(M-1) without clamping, so the
    identity ``mutual_information == fano_term + jensen_slack +
    confusion_slack`` holds for every error rate; the term equals the Fano
    lower bound whenever eps <= 1 - 1/M and may be negative past it.

    jensen_slack    = h(eps) - H(E|Y)                  (error predictability)
    confusion_slack = eps * (ln(M-1) - H(V|Y, E=1))    (structured confusions)
    """

    mutual_information: Nats
    fano_term: float
    jensen_slack: Nats
    confusion_slack: Nats
    error_rate: Probability
    m: int

    def identity_gap(self) -> float:
        """Residual of the decomposition identity; 0 up to roundoff."""
        return self.mutual_information - (
            self.fano_term + self.jensen_slack + self.confusion_slack
        )


def slack_decompose(joint: "JointDistribution | np.ndarray", *, uniform_tol: float = 1e-9) -> SlackDecomposition:
    """Decompose I(V;Y) for a square joint with uniform V marginal.

    V and Y share an alphabet of size M; an error is the event Y != V.
    Requires the V marginal to be uniform within ``uniform_tol`` (the
    decomposition is derived under a uniform prior) and the joint to be
    square.
    """
    j = joint.p if isinstance(joint, JointDistribution) else JointDistribution(np.asarray(joint)).p
    if j.shape[0] != j.shape[1]:
        raise DomainError("slack_decompose needs a square joint: V and Y share an alphabet")
    m = j.shape[0]
    if m < 2:
        raise DomainError("alphabet size M must be at least 2")
    pv = j.sum(axis=1)
    if np.max(np.abs(pv - 1.0 / m)) > uniform_tol:
        raise DomainError("V marginal must be uniform for the slack decomposition")

    py = j.sum(axis=0)
    diag = np.diag(j)
    eps = min(1.0, max(0.0, 1.0 - float(diag.sum())))

    # H(E|Y) = sum_y P(y) h(P(error|y))
    h_e_given_y = 0.0
    for y in range(m):
        if py[y] <= 0:
            continue
        err_y = min(1.0, max(0.0, 1.0 - float(diag[y]) / float(py[y])))
        h_e_given_y += float(py[y]) * binary_entropy(err_y)

    # H(V|Y, E=1): entropy of the wrong value given the observed answer.
    h_v_given_y_err = 0.0
    if eps > 0:
        for y in range(m):
            col = j[:, y].copy()
            col[y] = 0.0
            mass = float(col.sum())
            if mass <= 0:
                continue
            cond = col[col > 0] / mass
            h_v_given_y_err += (mass / eps) * float(-(cond * np.log(cond)).sum())

    mi = mutual_information(j)
    fano_term = _phi_raw(m, eps)
    jensen = binary_entropy(eps) - h_e_given_y
    confusion = eps * (math.log(m - 1) - h_v_given_y_err)
    return SlackDecomposition(
        mutual_information=mi,
        fano_term=fano_term,
        jensen_slack=jensen,
        confusion_slack=confusion,
        error_rate=eps,
        m=m,
    )


def routing_efficiency(i_used: Nats, i_avail: Nats, *, tolerance: float = 1e-9) -> float:
    """Fraction of available information that reached the decision.

    Returns i_used / i_avail clamped into [0, 1]. If i_used exceeds
    i_avail by more than ``tolerance`` a :class:`DpiViolationWarning` is
    emitted (the estimate then contradicts data processing), but the
    clamped ratio is still returned. i_avail must be positive.
    """
    i_used = float(i_used)
    i_avail = float(i_avail)
    if math.isnan(i_used) or math.isnan(i_avail) or i_used < 0 or i_avail < 0:
        raise DomainError("information quantities must be nonnegative numbers")
    if i_avail == 0.0:
        raise DomainError("routing efficiency is undefined when no information is available")
    if i_used > i_avail + tolerance:
        warnings.warn(
            f"used information {i_used} exceeds available {i_avail}; "
            "an estimate violates data processing",
            DpiViolationWarning,
            stacklevel=2,
        )
    return min(1.0, max(0.0, i_used / i_avail))


@dataclass(frozen=True, slots=True)
class WilsonInterval:
    """Wilson score interval for a binomial proportion."""

    lower: float
    upper: float
    confidence: float

    def contains(self, p: float) -> bool:
        return self.lower <= p <= self.upper

    def width(self) -> float:
        return self.upper - self.lower


def wilson_interval(successes: int, n: int, confidence: float = 0.95) -> WilsonInterval:
    """Wilson score interval, clipped to [0, 1].

    The interval always contains the point estimate successes/n.

    >>> iv = wilson_interval(399, 400)
    >>> round(iv.lower, 3)
    0.986
    """
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise DomainError(f"n must be a positive integer, got {n!r}")
    if not isinstance(successes, (int, np.integer)) or not 0 <= successes <= n:
        raise DomainError(f"successes must lie in [0, {n}], got {successes!r}")
    if not 0.0 < confidence < 1.0:
        raise DomainError(f"confidence must lie in (0, 1), got {confidence!r}")
    z = NormalDist().inv_cdf(0.5 + confidence / 2.0)
    p_hat = successes / n
    denom = 1.0 + z * z / n
    center = (p_hat + z * z / (2 * n)) / denom
    margin = (z / denom) * math.sqrt(p_hat * (1.0 - p_hat) / n + z * z / (4.0 * n * n))
    # the endpoints at successes in {0, n} are exactly p_hat; rounding
    # must not push them past it
    return WilsonInterval(
        lower=min(p_hat, max(0.0, center - margin)),
        upper=max(p_hat, min(1.0, center + margin)),
        confidence=confidence,
    )

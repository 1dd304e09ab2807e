"""Finite-alphabet channel laboratory: exact mutual-information decay
through stage chains, with checkpoint re-injection.

Two representations of the copy-or-noise stage exist and they are not
interchangeable:

* the merged matrix ``alpha*I + (1-alpha)*1 nu^T`` over the content
  alphabet. Good for building composite channels (with uniform noise it
  is exactly the M-ary symmetric channel), but the output no longer
  reveals whether a noise event happened, and its information decay is
  strictly below the copy probability in general.
* the tracked form over the augmented alphabet (content, noise flag),
  where the absorbing flag marks content that no longer derives from the
  source. Conditioning on the flag is what the exact-decay argument
  needs, so chains of tracked stages contract mutual information by
  exactly the product of their copy probabilities, for any prior and any
  noise distribution.

:func:`push_joint` uses the tracked form automatically when every stage
is copy-or-noise; any raw matrix stage downgrades the chain to merged
propagation, where only the plain data-processing check applies.

Alphabets are capped at 256 symbols; everything is dense and exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import DomainError, InvariantViolation
from .info import JointDistribution, entropy, mutual_information

__all__ = [
    "MAX_ALPHABET",
    "DiscreteChannel",
    "CopyOrNoiseChannel",
    "ChainSpec",
    "SdpiReport",
    "symmetric_channel",
    "copy_or_noise_as_matrix",
    "push_joint",
    "mi_trace",
    "verify_sdpi_contraction",
]

MAX_ALPHABET = 256
_ROW_TOL = 1e-12
_SDPI_TOL = 1e-10


def _check_alphabet(n: int) -> int:
    if not isinstance(n, (int, np.integer)) or n < 2:
        raise DomainError(f"alphabet size must be an integer >= 2, got {n!r}")
    if n > MAX_ALPHABET:
        raise DomainError(f"alphabet size {n} exceeds the dense-computation cap {MAX_ALPHABET}")
    return int(n)


def _check_dist(name: str, v: np.ndarray, size: int | None = None) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise DomainError(f"{name} must be a nonempty 1-d distribution")
    if size is not None and v.size != size:
        raise DomainError(f"{name} must have {size} entries, got {v.size}")
    if np.any(np.isnan(v)) or np.any(v < 0) or abs(float(v.sum()) - 1.0) > _ROW_TOL:
        raise DomainError(f"{name} must be nonnegative and sum to 1")
    return v


class DiscreteChannel:
    """Row-stochastic matrix from one finite alphabet to another.

    Rows must sum to 1 within 1e-12; the matrix is copied and frozen.
    """

    __slots__ = ("matrix",)

    def __init__(self, matrix: np.ndarray):
        m = np.array(matrix, dtype=float, copy=True)
        if m.ndim != 2 or m.size == 0:
            raise DomainError("channel matrix must be 2-d and nonempty")
        _check_alphabet(m.shape[0])
        _check_alphabet(m.shape[1])
        if np.any(np.isnan(m)) or np.any(m < 0):
            raise DomainError("channel entries must be nonnegative")
        rows = m.sum(axis=1)
        if np.max(np.abs(rows - 1.0)) > _ROW_TOL:
            raise DomainError("every channel row must sum to 1 within 1e-12")
        m.setflags(write=False)
        self.matrix = m

    @property
    def n_in(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_out(self) -> int:
        return self.matrix.shape[1]

    def __repr__(self) -> str:
        return f"DiscreteChannel({self.n_in}x{self.n_out})"


@dataclass(frozen=True, eq=False)
class CopyOrNoiseChannel:
    """Copy the input with probability alpha, else emit a draw from noise.

    alpha must lie in [0, 1]; noise is a distribution over the content
    alphabet.
    """

    alpha: float
    noise: np.ndarray

    def __post_init__(self):
        if math.isnan(self.alpha) or not 0.0 <= self.alpha <= 1.0:
            raise DomainError(f"alpha must lie in [0, 1], got {self.alpha!r}")
        nu = _check_dist("noise", self.noise)
        nu = np.array(nu, copy=True)
        nu.setflags(write=False)
        object.__setattr__(self, "noise", nu)

    @property
    def m(self) -> int:
        return int(self.noise.size)

    @classmethod
    def uniform(cls, alpha: float, m: int) -> "CopyOrNoiseChannel":
        m = _check_alphabet(m)
        return cls(alpha=alpha, noise=np.full(m, 1.0 / m))


def symmetric_channel(m: int, epsilon: float) -> DiscreteChannel:
    """M-ary symmetric channel: keep the symbol with probability
    1 - epsilon, else move to one of the M-1 others uniformly.

    Domain: 0 <= epsilon <= 1 - 1/M (at the cap the output is uniform and
    independent of the input).
    """
    m = _check_alphabet(m)
    if math.isnan(epsilon) or not 0.0 <= epsilon <= 1.0 - 1.0 / m:
        raise DomainError(f"epsilon must lie in [0, 1 - 1/M], got {epsilon!r}")
    mat = np.full((m, m), epsilon / (m - 1))
    np.fill_diagonal(mat, 1.0 - epsilon)
    return DiscreteChannel(mat)


def copy_or_noise_as_matrix(channel: CopyOrNoiseChannel, m: int | None = None) -> DiscreteChannel:
    """Merged content-alphabet matrix alpha*I + (1-alpha) * ones nu^T.

    This form forgets whether a symbol was copied or drawn from noise;
    with uniform noise it equals symmetric_channel(m, (1-alpha)(M-1)/M).
    """
    if m is None:
        m = channel.m
    m = _check_alphabet(m)
    if channel.m != m:
        raise DomainError(f"noise is over {channel.m} symbols, not {m}")
    mat = channel.alpha * np.eye(m) + (1.0 - channel.alpha) * np.outer(np.ones(m), channel.noise)
    return DiscreteChannel(mat)


def _tracked_matrix(channel: CopyOrNoiseChannel) -> np.ndarray:
    """Stage matrix over the augmented alphabet (content, flag).

    State index f*m + x. Copying preserves (x, f); a noise event emits
    (z, 1), so flag 1 is absorbing and marks content that no longer
    derives from the chain's source.
    """
    m = channel.m
    a = channel.alpha
    t = np.zeros((2 * m, 2 * m))
    for f in (0, 1):
        for x in range(m):
            row = f * m + x
            t[row, f * m + x] += a
            t[row, m:] += (1.0 - a) * channel.noise
    return t


Stage = Union[CopyOrNoiseChannel, DiscreteChannel]


@dataclass(frozen=True, eq=False)
class ChainSpec:
    """A source prior, an ordered list of stages, and checkpoint positions.

    A checkpoint at position j replaces the chain state with a fresh copy
    of the source V before stage j runs, so the final output depends only
    on the stages at or after the last checkpoint.
    """

    prior: np.ndarray
    stages: tuple[Stage, ...]
    checkpoint_positions: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        prior = _check_dist("prior", self.prior, None)
        m = _check_alphabet(prior.size)
        prior = np.array(prior, copy=True)
        prior.setflags(write=False)
        object.__setattr__(self, "prior", prior)
        object.__setattr__(self, "stages", tuple(self.stages))
        for i, st in enumerate(self.stages):
            if isinstance(st, CopyOrNoiseChannel):
                if st.m != m:
                    raise DomainError(f"stage {i} is over {st.m} symbols, chain is over {m}")
            elif isinstance(st, DiscreteChannel):
                if st.n_in != m or st.n_out != m:
                    raise DomainError(f"stage {i} must be {m}x{m} to chain, got {st.n_in}x{st.n_out}")
            else:
                raise DomainError(f"stage {i} has unsupported type {type(st).__name__}")
        positions = frozenset(int(p) for p in self.checkpoint_positions)
        for p in positions:
            if not 0 <= p < len(self.stages):
                raise DomainError(f"checkpoint position {p} is outside the chain of length {len(self.stages)}")
        object.__setattr__(self, "checkpoint_positions", positions)

    @property
    def m(self) -> int:
        return int(self.prior.size)

    def all_copy_or_noise(self) -> bool:
        return all(isinstance(s, CopyOrNoiseChannel) for s in self.stages)


def _propagate(chain: ChainSpec) -> tuple[list[np.ndarray], bool]:
    """Conditional state distributions P(state | V=v) after each stage.

    Returns the list of conditionals (index 0 is the initial coupling)
    and whether the tracked augmented representation was used.
    """
    m = chain.m
    tracked = chain.all_copy_or_noise()
    width = 2 * m if tracked else m

    def fresh() -> np.ndarray:
        cond = np.zeros((m, width))
        cond[np.arange(m), np.arange(m)] = 1.0  # state = (V, flag 0)
        return cond

    cond = fresh()
    out = [cond]
    for t, stage in enumerate(chain.stages):
        if t in chain.checkpoint_positions:
            cond = fresh()
        if tracked:
            mat = _tracked_matrix(stage)  # type: ignore[arg-type]
        elif isinstance(stage, CopyOrNoiseChannel):
            mat = copy_or_noise_as_matrix(stage).matrix
        else:
            mat = stage.matrix
        cond = cond @ mat
        out.append(cond)
    return out, tracked


def push_joint(chain: ChainSpec) -> JointDistribution:
    """Exact joint distribution of (V, final chain output).

    An empty chain returns the identity coupling, whose mutual
    information is H(V).
    """
    conds, _ = _propagate(chain)
    return JointDistribution(chain.prior[:, None] * conds[-1])


def mi_trace(chain: ChainSpec) -> list[float]:
    """Mutual information I(V; state) after each stage, starting with the
    initial coupling. Checkpoint re-injection appears as a jump back to
    H(V); between checkpoints the trace is nonincreasing."""
    conds, _ = _propagate(chain)
    return [mutual_information(chain.prior[:, None] * c) for c in conds]


@dataclass(frozen=True, slots=True)
class SdpiReport:
    """Outcome of a contraction check over a chain.

    mode is "exact" when every stage was copy-or-noise (tracked form,
    equality certified) and "dpi_only" otherwise. alpha_product is the
    product of copy probabilities over the stages after the last
    checkpoint, or None in dpi_only mode.
    """

    mode: str
    initial_mi: float
    final_mi: float
    alpha_product: float | None
    per_stage_mi: tuple[float, ...]
    bound: float
    equality: bool


def verify_sdpi_contraction(chain: ChainSpec) -> SdpiReport:
    """Check the contraction certificate for a chain and return evidence.

    For all-copy-or-noise chains asserts
    ``MI(final) <= prod(alpha) * MI(initial) + 1e-10`` with equality (the
    tracked representation attains the bound exactly); for chains with
    raw matrix stages only the plain data-processing inequality
    ``MI(final) <= MI(initial) + 1e-10`` and per-segment monotonicity are
    checked. Violations raise :class:`InvariantViolation`; they indicate
    a numerical defect, not a property of the inputs.
    """
    trace = mi_trace(chain)
    initial, final = trace[0], trace[-1]

    # Monotone within segments; a checkpoint may restore MI to H(V).
    for t in range(1, len(trace)):
        if (t - 1) in chain.checkpoint_positions:
            continue
        if trace[t] > trace[t - 1] + _SDPI_TOL:
            raise InvariantViolation(
                f"MI increased across stage {t - 1}: {trace[t - 1]} -> {trace[t]}"
            )

    if chain.all_copy_or_noise():
        start = 0
        if chain.checkpoint_positions:
            start = max(chain.checkpoint_positions)
        product = 1.0
        for st in chain.stages[start:]:
            product *= st.alpha  # type: ignore[union-attr]
        bound = product * initial
        if final > bound + _SDPI_TOL:
            raise InvariantViolation(
                f"contraction bound violated: MI {final} > {product} * {initial}"
            )
        equality = abs(final - bound) <= _SDPI_TOL
        if not equality:
            raise InvariantViolation(
                f"tracked copy-or-noise chain should attain the bound exactly; "
                f"got {final} vs {bound}"
            )
        return SdpiReport(
            mode="exact",
            initial_mi=initial,
            final_mi=final,
            alpha_product=product,
            per_stage_mi=tuple(trace),
            bound=bound,
            equality=True,
        )

    if final > initial + _SDPI_TOL:
        raise InvariantViolation(f"data processing violated: {final} > {initial}")
    return SdpiReport(
        mode="dpi_only",
        initial_mi=initial,
        final_mi=final,
        alpha_product=None,
        per_stage_mi=tuple(trace),
        bound=initial,
        equality=False,
    )


def uniform_prior(m: int) -> np.ndarray:
    """Uniform source distribution over m symbols."""
    m = _check_alphabet(m)
    return np.full(m, 1.0 / m)


def source_entropy(chain: ChainSpec) -> float:
    """H(V) for the chain's prior, in nats."""
    return entropy(chain.prior)

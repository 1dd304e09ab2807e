"""Single-readout failure classification from next-token scores.

A trial is one readout: the scored tokens at the answer position, a
candidate set C, and the target. Errors split into two stages:

* stage 2A (gating): the top-scored token is outside C entirely; the
  candidate block never reached the decision.
* stage 2B (binding): a candidate won, but not the target; the block was
  routed yet the wrong member was selected.

Scores may be logits or logprobs; every statistic here depends only on
score differences, so any per-trial additive shift cancels.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import (
    DomainError,
    GateGapUnavailableError,
    ValueGapUnavailableError,
)
from .info import WilsonInterval, fano_lower_bound, wilson_interval

__all__ = [
    "Verdict",
    "LogprobRecord",
    "StageOutcome",
    "StageSummary",
    "classify",
    "aggregate",
    "mi_bound_from_cand_acc",
]


class Verdict(enum.Enum):
    CORRECT = "correct"
    STAGE_2A = "stage_2a"
    STAGE_2B = "stage_2b"


@dataclass(frozen=True, slots=True)
class LogprobRecord:
    """Scores observed at one readout position.

    entries maps token id to score (logit or logprob). candidate_ids is
    the candidate set C; target_id must be a member. Providers that
    return only a top-n slice may omit tokens, including candidates.
    """

    entries: Mapping[int, float]
    candidate_ids: tuple[int, ...]
    target_id: int

    def __post_init__(self):
        if len(self.candidate_ids) != len(set(self.candidate_ids)):
            raise DomainError("candidate_ids must not contain duplicates")
        if self.target_id not in self.candidate_ids:
            raise DomainError(f"target {self.target_id} is not in the candidate set")
        for tok, score in self.entries.items():
            if math.isnan(score):
                raise DomainError(f"score for token {tok} is NaN")


@dataclass(frozen=True, slots=True)
class StageOutcome:
    """Classification of one readout.

    When the record held no token outside C the gate side cannot be
    judged: gate_available is False and verdict, top_token and gate_gap
    are None, while the candidate-side fields remain valid.
    """

    verdict: Verdict | None
    top_token: int | None
    best_candidate: int
    candidate_correct: bool
    gate_gap: float | None
    value_gap: float
    gate_available: bool
    tie_broken: bool


def _argmax_lowest_id(scores: Mapping[int, float], ids: Iterable[int]) -> tuple[int, float, bool]:
    """Max-scoring id; exact score ties break toward the lowest id."""
    best_id: int | None = None
    best = -math.inf
    tied = False
    for tok in ids:
        s = scores[tok]
        if best_id is None or s > best or (s == best and tok < best_id):
            tied = best_id is not None and s == best
            best, best_id = s, tok
        elif s == best:
            tied = True
    assert best_id is not None
    return best_id, best, tied


def classify(record: LogprobRecord, *, require_gate: bool = True) -> StageOutcome:
    """Classify one readout into CORRECT / STAGE_2A / STAGE_2B.

    gate_gap  = max_{v in C} z(v) - max_{x not in C} z(x)
    value_gap = z(target) - max_{v in C, v != target} z(v)

    Requires the target score and at least one other candidate score to be
    present (else :class:`ValueGapUnavailableError`). If no non-candidate
    token is present the gate side is unavailable: with require_gate the
    call raises :class:`GateGapUnavailableError`; without it a partial
    outcome is returned so the trial can still feed candidate statistics.

    Exact score ties break toward the lowest token id and are flagged via
    tie_broken so aggregation can surface the tie rate.
    """
    entries = record.entries
    cand_present = [c for c in record.candidate_ids if c in entries]
    if record.target_id not in entries or len(cand_present) < 2:
        raise ValueGapUnavailableError(
            "value gap needs scores for the target and at least one other candidate"
        )

    best_cand, best_cand_score, tie_cand = _argmax_lowest_id(entries, cand_present)
    others = [c for c in cand_present if c != record.target_id]
    runner_up_score = max(entries[c] for c in others)
    value_gap = entries[record.target_id] - runner_up_score

    cand_set = set(record.candidate_ids)
    non_cand = [t for t in entries if t not in cand_set]
    if not non_cand:
        if require_gate:
            raise GateGapUnavailableError(
                "record holds no token outside the candidate set"
            )
        return StageOutcome(
            verdict=None,
            top_token=None,
            best_candidate=best_cand,
            candidate_correct=best_cand == record.target_id,
            gate_gap=None,
            value_gap=value_gap,
            gate_available=False,
            tie_broken=tie_cand,
        )

    top_token, _, tie_top = _argmax_lowest_id(entries, entries.keys())
    best_non_cand_score = max(entries[t] for t in non_cand)
    gate_gap = best_cand_score - best_non_cand_score

    if top_token == record.target_id:
        verdict = Verdict.CORRECT
    elif top_token in cand_set:
        verdict = Verdict.STAGE_2B
    else:
        verdict = Verdict.STAGE_2A

    return StageOutcome(
        verdict=verdict,
        top_token=top_token,
        best_candidate=best_cand,
        candidate_correct=best_cand == record.target_id,
        gate_gap=gate_gap,
        value_gap=value_gap,
        gate_available=True,
        tie_broken=tie_cand or tie_top,
    )


@dataclass(frozen=True, slots=True)
class StageSummary:
    """Aggregate statistics over a batch of readouts.

    Accuracy and the 2A/2B split are computed over the gate-available
    trials only; candidate accuracy and the value gap use every trial.
    frac_2a and frac_2b are conditional on at least one error and are
    None when the batch had none (never 0/0).
    """

    n: int
    n_gate_available: int
    n_errors: int
    acc: float | None
    acc_ci: WilsonInterval | None
    cand_acc: float
    cand_acc_ci: WilsonInterval
    frac_2a: float | None
    frac_2b: float | None
    mean_gate_gap: float | None
    mean_value_gap: float
    tie_rate: float
    confidence: float = field(default=0.95)


def aggregate(outcomes: Sequence[StageOutcome], confidence: float = 0.95) -> StageSummary:
    """Summarize classified readouts with Wilson intervals.

    A singleton batch reproduces that outcome's statistics exactly.
    """
    if not outcomes:
        raise DomainError("aggregate needs at least one outcome")

    n = len(outcomes)
    gate = [o for o in outcomes if o.gate_available]
    n_cand_correct = sum(o.candidate_correct for o in outcomes)
    cand_acc = n_cand_correct / n

    acc: float | None = None
    acc_ci: WilsonInterval | None = None
    frac_2a: float | None = None
    frac_2b: float | None = None
    mean_gate_gap: float | None = None
    n_errors = 0
    if gate:
        n_correct = sum(o.verdict is Verdict.CORRECT for o in gate)
        errors = [o for o in gate if o.verdict is not Verdict.CORRECT]
        n_errors = len(errors)
        acc = n_correct / len(gate)
        acc_ci = wilson_interval(n_correct, len(gate), confidence)
        if errors:
            n_2a = sum(o.verdict is Verdict.STAGE_2A for o in errors)
            frac_2a = n_2a / n_errors
            frac_2b = (n_errors - n_2a) / n_errors
        mean_gate_gap = sum(o.gate_gap for o in gate) / len(gate)  # type: ignore[misc]

    return StageSummary(
        n=n,
        n_gate_available=len(gate),
        n_errors=n_errors,
        acc=acc,
        acc_ci=acc_ci,
        cand_acc=cand_acc,
        cand_acc_ci=wilson_interval(n_cand_correct, n, confidence),
        frac_2a=frac_2a,
        frac_2b=frac_2b,
        mean_gate_gap=mean_gate_gap,
        mean_value_gap=sum(o.value_gap for o in outcomes) / n,
        tie_rate=sum(o.tie_broken for o in outcomes) / n,
        confidence=confidence,
    )


def mi_bound_from_cand_acc(cand_acc: float, m: int) -> float:
    """Lower bound, in nats, on the information the readout actually used,
    from candidate accuracy over an M-way uniform choice.

    Below chance (cand_acc < 1/M) the bound is vacuous and clamps to 0.

    >>> round(mi_bound_from_cand_acc(0.255, 50), 4)
    0.4449
    >>> mi_bound_from_cand_acc(0.0, 50)
    0.0
    """
    if math.isnan(cand_acc) or not 0.0 <= cand_acc <= 1.0:
        raise DomainError(f"cand_acc must lie in [0, 1], got {cand_acc!r}")
    if cand_acc < 1.0 / m:
        return 0.0
    return fano_lower_bound(m, 1.0 - cand_acc)

"""End-to-end runs: generate, score, classify, certify, aggregate.

Every function here is deterministic given its inputs and the
provider's own determinism; aggregation never depends on scoring
completion order, so parallel providers give identical tables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .audit import (
    DEFAULT_FAMILY,
    DEFAULT_TAU,
    BudgetCertificate,
    NullFamily,
    StepAudit,
    budget_test,
    envelope,
    summarize,
)
from .channels import ChainSpec, CopyOrNoiseChannel, mi_trace, uniform_prior, verify_sdpi_contraction
from .errors import DomainError
from .info import wilson_interval
from .report import BudgetRow, CheckpointRow, ConditionKey, StageRow
from .stages import StageOutcome, aggregate, classify
from .tasks import (
    CheckpointMode,
    FillerKind,
    TaskInstance,
    TaskKind,
    build_pool,
    generate,
    insert_checkpoints,
)
from .providers import score_all

__all__ = [
    "gen_instances",
    "variant_of",
    "classify_all",
    "run_stage",
    "run_checkpoint",
    "run_budget",
    "run_simulate",
]


def gen_instances(
    tasks: Sequence[TaskKind],
    k_values: Sequence[int],
    fillers: Sequence[FillerKind],
    seed: int,
    trials: int,
    *,
    pool_size: int = 50,
    decoy_reps: int = 12,
    n_distractors: int = 48,
) -> list[TaskInstance]:
    """Cross product of conditions, ``trials`` instances each."""
    if trials < 1:
        raise DomainError(f"trials must be >= 1, got {trials}")
    if not tasks or not k_values or not fillers:
        raise DomainError("need at least one task, one k value, and one filler kind")
    pool = build_pool(seed, pool_size)
    out: list[TaskInstance] = []
    for task in tasks:
        for k in k_values:
            for filler in fillers:
                for trial in range(trials):
                    out.append(
                        generate(
                            task,
                            k,
                            filler,
                            seed,
                            pool=pool,
                            trial=trial,
                            decoy_reps=decoy_reps,
                            n_distractors=n_distractors,
                        )
                    )
    return out


def variant_of(inst: TaskInstance) -> str:
    if inst.scrub_op is not None:
        return inst.scrub_op.value
    if inst.checkpoint_mode is not None:
        return f"{inst.checkpoint_mode.value}@{inst.checkpoint_every}"
    return "base"


def classify_all(
    provider, instances: Sequence[TaskInstance], *, require_gate: bool = False
) -> list[tuple[TaskInstance, StageOutcome]]:
    """Score and classify every instance, preserving input order."""
    records = score_all(provider, instances)
    return [
        (inst, classify(records[inst.instance_id], require_gate=require_gate))
        for inst in instances
    ]


def _group_key(provider_name: str, inst: TaskInstance) -> ConditionKey:
    return ConditionKey(
        provider=provider_name,
        task=inst.task.value,
        k=inst.k,
        filler=inst.filler.value,
        variant=variant_of(inst),
        seed=inst.seed,
    )


def run_stage(
    provider, instances: Sequence[TaskInstance], *, confidence: float = 0.95
) -> list[StageRow]:
    """Classify and aggregate per condition.

    Gate-unavailable records stay in the candidate statistics (lenient
    path); aggregate() reports top-token rates over the gate-available
    subset only.
    """
    pairs = classify_all(provider, instances, require_gate=False)
    groups: dict[ConditionKey, list[StageOutcome]] = {}
    m_of: dict[ConditionKey, int] = {}
    for inst, outcome in pairs:
        key = _group_key(getattr(provider, "name", "provider"), inst)
        groups.setdefault(key, []).append(outcome)
        m_of.setdefault(key, len(inst.candidates))
    return [
        StageRow.from_summary(key, aggregate(outs, confidence=confidence), m_of[key])
        for key, outs in groups.items()
    ]


def _cand_accuracy(outcomes: Sequence[StageOutcome]) -> tuple[int, int]:
    hits = sum(1 for o in outcomes if o.candidate_correct)
    return hits, len(outcomes)


def _mean_value_gap(outcomes: Sequence[StageOutcome]) -> float | None:
    vals = [o.value_gap for o in outcomes if o.value_gap is not None and math.isfinite(o.value_gap)]
    return sum(vals) / len(vals) if vals else None


def run_checkpoint(
    provider,
    instances: Sequence[TaskInstance],
    every: int,
    mode: CheckpointMode,
    *,
    confidence: float = 0.95,
) -> list[CheckpointRow]:
    """Score each instance and its checkpointed twin on identical seeds.

    Accuracy here is the candidate decision (best candidate equals the
    target), so hedge mass on non-candidates cannot mask recovery.
    """
    for inst in instances:
        if variant_of(inst) != "base":
            raise DomainError(f"checkpoint runs need base instances, got {inst.instance_id}")
    twins = [insert_checkpoints(inst, every, mode) for inst in instances]
    base_pairs = classify_all(provider, instances, require_gate=False)
    chk_pairs = classify_all(provider, twins, require_gate=False)

    groups: dict[ConditionKey, tuple[list[StageOutcome], list[StageOutcome]]] = {}
    for (inst, base_out), (_, chk_out) in zip(base_pairs, chk_pairs):
        key = _group_key(getattr(provider, "name", "provider"), inst)
        key = ConditionKey(
            provider=key.provider,
            task=key.task,
            k=key.k,
            filler=key.filler,
            variant=f"{mode.value}@{every}",
            seed=key.seed,
        )
        b, c = groups.setdefault(key, ([], []))
        b.append(base_out)
        c.append(chk_out)

    rows: list[CheckpointRow] = []
    for key, (base_outs, chk_outs) in groups.items():
        bh, bn = _cand_accuracy(base_outs)
        ch, cn = _cand_accuracy(chk_outs)
        b_ci = wilson_interval(bh, bn, confidence=confidence)
        c_ci = wilson_interval(ch, cn, confidence=confidence)
        b_acc = bh / bn
        c_acc = ch / cn
        rows.append(
            CheckpointRow(
                key=key,
                n=bn,
                baseline_acc=b_acc,
                baseline_lo=b_ci.lower,
                baseline_hi=b_ci.upper,
                checkpoint_acc=c_acc,
                checkpoint_lo=c_ci.lower,
                checkpoint_hi=c_ci.upper,
                delta_acc=c_acc - b_acc,
                value_gap_base=_mean_value_gap(base_outs),
                value_gap_chk=_mean_value_gap(chk_outs),
            )
        )
    return rows


@dataclass(frozen=True, slots=True)
class InstanceMeasurement:
    """Reusable per-instance quantities for a tau sweep."""

    instance_id: str
    p1: float
    p0_by_null: Mapping[str, float]
    failed_nulls: tuple[str, ...]
    complete: bool
    outcome: bool


def measure_instances(
    provider,
    instances: Sequence[TaskInstance],
    family: NullFamily = DEFAULT_FAMILY,
) -> list[InstanceMeasurement]:
    """Measure p1 and the null envelope once per instance."""
    if not hasattr(provider, "prob_of_target"):
        raise DomainError(
            "budget runs need a probability-returning provider "
            f"({getattr(provider, 'name', provider)!r} has no prob_of_target)"
        )
    out: list[InstanceMeasurement] = []
    for inst in instances:
        p1 = float(provider.prob_of_target(inst))
        env = envelope(provider, inst, family)
        if not env.p0_by_null:
            raise DomainError(
                f"every null operator failed for {inst.instance_id}: {dict(env.failed)}"
            )
        rec = provider.score(inst)
        outcome = classify(rec, require_gate=False).best_candidate == inst.target_id
        out.append(
            InstanceMeasurement(
                instance_id=inst.instance_id,
                p1=p1,
                p0_by_null=env.p0_by_null,
                failed_nulls=tuple(sorted(env.failed)),
                complete=env.complete,
                outcome=outcome,
            )
        )
    return out


def run_budget(
    measurements: Sequence[InstanceMeasurement],
    tau_values: Sequence[float],
    label: str,
) -> tuple[list[BudgetRow], dict[float, list[tuple[str, BudgetCertificate]]]]:
    """Budget-test every measurement at every threshold.

    Returns summary rows (one per tau) plus the per-instance
    certificates keyed by tau.
    """
    if not tau_values:
        raise DomainError("need at least one tau")
    rows: list[BudgetRow] = []
    certs: dict[float, list[tuple[str, BudgetCertificate]]] = {}
    for tau in tau_values:
        audits: list[StepAudit] = []
        per_tau: list[tuple[str, BudgetCertificate]] = []
        for i, m in enumerate(measurements):
            cert = budget_test(
                m.p1, m.p0_by_null, tau, complete=m.complete, failed_nulls=m.failed_nulls
            )
            per_tau.append((m.instance_id, cert))
            audits.append(
                StepAudit(index=i, certificate=cert, unauditable_reason=None, outcome=m.outcome)
            )
        rows.append(BudgetRow.from_summary(label, tau, summarize(audits)))
        certs[tau] = per_tau
    return rows, certs


def run_simulate(
    m: int,
    alphas: Sequence[float],
    *,
    checkpoint_positions: Iterable[int] = (),
    check: bool = True,
) -> dict:
    """Build a uniform copy-or-noise chain and report its contraction."""
    stages = tuple(CopyOrNoiseChannel.uniform(a, m) for a in alphas)
    chain = ChainSpec(
        prior=uniform_prior(m),
        stages=stages,
        checkpoint_positions=frozenset(checkpoint_positions),
    )
    report = verify_sdpi_contraction(chain) if check else None
    trace = mi_trace(chain)
    doc = {
        "m": m,
        "alphas": list(alphas),
        "checkpoint_positions": sorted(chain.checkpoint_positions),
        "per_stage_mi": trace,
        "final_mi": trace[-1],
    }
    if report is not None:
        doc.update(
            {
                "mode": report.mode,
                "initial_mi": report.initial_mi,
                "alpha_product": report.alpha_product,
                "bound": report.bound,
                "equality": report.equality,
            }
        )
    return doc

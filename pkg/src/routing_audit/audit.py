"""Evidence-ablation audits: pseudo-priors, null-family envelopes,
budget tests, and trace auditing.

The budget question for one claim: given success probability p1 with
full context and p0 after scrubbing the cited evidence, does the
observed divergence KL(p1 || p0) cover the divergence KL(t || p0)
required to reach the stated confidence t? The test runs against every
operator in a null family and passes only if it holds for all of them.

A direction guard (p1 >= p0) is applied on top of the divergence
inequality: KL is large for a step whose success probability collapses
below its pseudo-prior, and such confidently-wrong steps must not pass.

Degenerate pseudo-priors keep the test decidable. At p0 = 0 both sides
are infinite and the comparison falls back to the success
probabilities themselves (PASS iff p1 >= t); at p0 = 1 the required
divergence is infinite for any t < 1, so the step flags unless the
threshold equals the pseudo-prior exactly (then ReqBits = 0).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import DataError, DomainError
from .info import WilsonInterval, kl_bernoulli, wilson_interval
from .stages import classify
from .tasks import ScrubOp, TaskInstance, scrub

__all__ = [
    "DEFAULT_TAU",
    "NullFamily",
    "DEFAULT_FAMILY",
    "PseudoPrior",
    "EnvelopeResult",
    "BudgetCertificate",
    "TraceStep",
    "StepAudit",
    "AuditSummary",
    "UnusedInfoCertificate",
    "pseudo_prior",
    "pseudo_prior_rate",
    "envelope",
    "budget_test",
    "audit_trace",
    "summarize",
    "probe_comparator",
    "audit_instance",
    "read_trace_jsonl",
]

DEFAULT_TAU = 0.75

PASS = "PASS"
FLAG = "FLAG"


@dataclass(frozen=True, slots=True)
class NullFamily:
    """Nonempty set of structure-preserving scrub operators."""

    operators: tuple[ScrubOp, ...]
    name: str = "custom"

    def __post_init__(self):
        if not self.operators:
            raise DomainError("null family must contain at least one operator")
        if len(set(self.operators)) != len(self.operators):
            raise DomainError("null family contains duplicate operators")


DEFAULT_FAMILY = NullFamily(
    operators=(
        ScrubOp.REDACT_SPAN,
        ScrubOp.DELETE_SPAN,
        ScrubOp.MASK_SAME_LEN,
        ScrubOp.NO_EVIDENCE,
    ),
    name="default",
)


@dataclass(frozen=True, slots=True)
class PseudoPrior:
    """Success probability after one scrub, with the estimation mode."""

    value: float
    op: ScrubOp
    mode: str  # "probability" | "greedy"


def _greedy_correct(provider, instance: TaskInstance) -> bool:
    rec = provider.score(instance)
    outcome = classify(rec, require_gate=False)
    return outcome.best_candidate == instance.target_id


def pseudo_prior(provider, instance: TaskInstance, op: ScrubOp, *, mode: str = "auto") -> PseudoPrior:
    """Estimate the success probability after scrubbing with ``op``.

    probability mode uses the provider's candidate-renormalized target
    probability; greedy mode scores one trial and returns 0 or 1. auto
    prefers probability when the provider exposes it.
    """
    if mode not in ("auto", "probability", "greedy"):
        raise DomainError(f"unknown pseudo-prior mode {mode!r}")
    nulled = scrub(instance, op)
    if mode == "auto":
        mode = "probability" if hasattr(provider, "prob_of_target") else "greedy"
    if mode == "probability":
        if not hasattr(provider, "prob_of_target"):
            raise DomainError(f"provider {getattr(provider, 'name', provider)!r} cannot return probabilities")
        return PseudoPrior(value=float(provider.prob_of_target(nulled)), op=op, mode=mode)
    return PseudoPrior(value=1.0 if _greedy_correct(provider, nulled) else 0.0, op=op, mode=mode)


def pseudo_prior_rate(
    provider, instances: Sequence[TaskInstance], op: ScrubOp, *, confidence: float = 0.95
) -> tuple[float, WilsonInterval]:
    """Empirical greedy success rate over a batch of scrubbed instances."""
    if not instances:
        raise DomainError("pseudo_prior_rate needs at least one instance")
    hits = sum(1 for inst in instances if _greedy_correct(provider, scrub(inst, op)))
    return hits / len(instances), wilson_interval(hits, len(instances), confidence=confidence)


@dataclass(frozen=True, slots=True)
class EnvelopeResult:
    """Pseudo-priors across a null family.

    Failed operators are recorded, never dropped: complete is False
    whenever any operator could not be evaluated, and downstream
    certificates inherit that flag.
    """

    p0_by_null: Mapping[str, float]
    p0_min: float | None
    p0_max: float | None
    failed: Mapping[str, str]
    mode: str
    complete: bool


def envelope(provider, instance: TaskInstance, family: NullFamily, *, mode: str = "auto") -> EnvelopeResult:
    """Evaluate the pseudo-prior under every operator in the family."""
    p0: dict[str, float] = {}
    failed: dict[str, str] = {}
    modes_seen: set[str] = set()
    for op in family.operators:
        try:
            est = pseudo_prior(provider, instance, op, mode=mode)
            p0[op.value] = est.value
            modes_seen.add(est.mode)
        except Exception as exc:  # provider or scrub failure: record, keep going
            failed[op.value] = f"{type(exc).__name__}: {exc}"
    return EnvelopeResult(
        p0_by_null=p0,
        p0_min=min(p0.values()) if p0 else None,
        p0_max=max(p0.values()) if p0 else None,
        failed=failed,
        mode=",".join(sorted(modes_seen)) if modes_seen else mode,
        complete=not failed,
    )


@dataclass(frozen=True, slots=True)
class BudgetCertificate:
    """Verdict of the budget test for one claim.

    req_bits/obs_bits are the values at the worst operator (the one
    with the smallest margin); the per-operator values are kept in the
    _by_null maps. Infinite divergences stay math.inf here and are
    rendered explicitly at the reporting boundary.
    """

    p1: float
    threshold: float
    threshold_source: str  # "tau" | "confidence"
    p0_by_null: Mapping[str, float]
    p0_min: float
    p0_max: float
    req_bits_by_null: Mapping[str, float]
    obs_bits_by_null: Mapping[str, float]
    req_bits: float
    obs_bits: float
    worst_null: str
    verdict: str
    complete: bool = True
    failed_nulls: tuple[str, ...] = ()

    @property
    def passed(self) -> bool:
        return self.verdict == PASS


def _check_prob(name: str, x: float) -> float:
    x = float(x)
    if not (0.0 <= x <= 1.0) or math.isnan(x):
        raise DomainError(f"{name} must be a probability in [0, 1], got {x!r}")
    return x


def _eval_null(p1: float, p0: float, t: float) -> tuple[float, float, bool, float]:
    """Per-operator test. Returns (req, obs, passed, margin).

    margin orders operators from hardest to easiest; when both
    divergences are infinite it falls back to the probability gap.
    """
    req = kl_bernoulli(t, p0)
    obs = kl_bernoulli(p1, p0)
    guard = p1 >= p0
    if math.isinf(req) and math.isinf(obs):
        passed = guard and p1 >= t
        margin = p1 - t
    elif math.isinf(req):
        passed = False
        margin = -math.inf
    elif math.isinf(obs):
        passed = guard
        margin = math.inf
    else:
        passed = guard and obs >= req
        margin = obs - req
    if not guard:
        margin = -math.inf
    return req, obs, passed, margin


def budget_test(
    p1: float,
    p0_by_null: Mapping,
    tau: float = DEFAULT_TAU,
    *,
    confidence: float | None = None,
    complete: bool = True,
    failed_nulls: Sequence[str] = (),
) -> BudgetCertificate:
    """Run the budget inequality against every null operator.

    The threshold is the claimed step confidence when one is supplied,
    otherwise the reliability target tau; the source is recorded.
    Equality of observed and required bits passes.
    """
    p1 = _check_prob("p1", p1)
    if confidence is not None:
        t = _check_prob("confidence", confidence)
        source = "confidence"
    else:
        t = float(tau)
        if not (0.0 < t < 1.0):
            raise DomainError(f"tau must lie in (0, 1), got {tau!r}")
        source = "tau"
    if not p0_by_null:
        raise DomainError("budget_test needs at least one pseudo-prior")

    p0_map: dict[str, float] = {}
    for op, v in p0_by_null.items():
        key = op.value if isinstance(op, ScrubOp) else str(op)
        p0_map[key] = _check_prob(f"p0[{key}]", v)

    req_by: dict[str, float] = {}
    obs_by: dict[str, float] = {}
    worst: tuple[bool, float, str] | None = None
    all_pass = True
    for name in sorted(p0_map):
        req, obs, passed, margin = _eval_null(p1, p0_map[name], t)
        req_by[name] = req
        obs_by[name] = obs
        all_pass = all_pass and passed
        rank = (passed, margin, name)
        if worst is None or rank < worst:
            worst = rank
    assert worst is not None
    worst_name = worst[2]
    return BudgetCertificate(
        p1=p1,
        threshold=t,
        threshold_source=source,
        p0_by_null=p0_map,
        p0_min=min(p0_map.values()),
        p0_max=max(p0_map.values()),
        req_bits_by_null=req_by,
        obs_bits_by_null=obs_by,
        req_bits=req_by[worst_name],
        obs_bits=obs_by[worst_name],
        worst_null=worst_name,
        verdict=PASS if all_pass else FLAG,
        complete=complete,
        failed_nulls=tuple(failed_nulls),
    )


@dataclass(frozen=True, slots=True)
class TraceStep:
    """One claim of a structured trace.

    confidence is the step's own stated success probability when the
    trace carries one; p1 and p0_by_null are verifier probabilities of
    entailment with full and scrubbed context. outcome, when labeled,
    records whether the step's claim was actually correct.
    """

    claim: str
    cited_spans: tuple[str, ...]
    p1: float | None = None
    p0_by_null: Mapping[str, float] = field(default_factory=dict)
    confidence: float | None = None
    outcome: bool | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "TraceStep":
        try:
            return cls(
                claim=str(d["claim"]),
                cited_spans=tuple(d.get("cited_spans", ())),
                p1=None if d.get("p1") is None else float(d["p1"]),
                p0_by_null={str(k): float(v) for k, v in d.get("p0_by_null", {}).items()},
                confidence=None if d.get("confidence") is None else float(d["confidence"]),
                outcome=d.get("outcome"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed trace step: {exc}") from exc


@dataclass(frozen=True, slots=True)
class StepAudit:
    """Audit outcome for one trace step."""

    index: int
    certificate: BudgetCertificate | None
    unauditable_reason: str | None
    outcome: bool | None

    @property
    def auditable(self) -> bool:
        return self.certificate is not None


def audit_trace(steps: Sequence[TraceStep], tau: float | None = DEFAULT_TAU) -> list[StepAudit]:
    """Audit every step; unauditable steps are reported, not dropped.

    Steps with a stated confidence are tested against it; steps without
    fall back to tau. A step with neither, with no cited spans, or with
    missing probabilities is unauditable.
    """
    audits: list[StepAudit] = []
    for i, step in enumerate(steps):
        reason = None
        if not step.cited_spans:
            reason = "no cited spans"
        elif step.p1 is None:
            reason = "missing full-context probability p1"
        elif not step.p0_by_null:
            reason = "no pseudo-priors"
        elif step.confidence is None and tau is None:
            reason = "no stated confidence and no tau"
        if reason is not None:
            audits.append(StepAudit(index=i, certificate=None, unauditable_reason=reason, outcome=step.outcome))
            continue
        cert = budget_test(
            step.p1,
            step.p0_by_null,
            tau if tau is not None else DEFAULT_TAU,
            confidence=step.confidence,
        )
        audits.append(StepAudit(index=i, certificate=cert, unauditable_reason=None, outcome=step.outcome))
    return audits


@dataclass(frozen=True, slots=True)
class AuditSummary:
    """Aggregate of one trace audit.

    acc_pass/acc_flag need outcome labels and are None without them;
    lift_pp = 100 * (acc_pass - acc_flag) when both exist. Means skip
    non-finite values so infinite divergences never poison aggregates.
    """

    n: int
    n_unauditable: int
    pass_rate: float | None
    acc_pass: float | None
    acc_flag: float | None
    lift_pp: float | None
    mean_p1: float | None
    mean_p0: float | None


def _mean(xs: Iterable[float]) -> float | None:
    vals = [x for x in xs if math.isfinite(x)]
    return sum(vals) / len(vals) if vals else None


def summarize(audits: Sequence[StepAudit]) -> AuditSummary:
    scored = [a for a in audits if a.certificate is not None]
    n = len(scored)
    passes = [a for a in scored if a.certificate.passed]
    flags = [a for a in scored if not a.certificate.passed]

    def acc(bucket: list[StepAudit]) -> float | None:
        labeled = [a for a in bucket if a.outcome is not None]
        if not labeled:
            return None
        return sum(1 for a in labeled if a.outcome) / len(labeled)

    acc_pass = acc(passes)
    acc_flag = acc(flags)
    lift = None
    if acc_pass is not None and acc_flag is not None:
        lift = 100.0 * (acc_pass - acc_flag)
    return AuditSummary(
        n=n,
        n_unauditable=len(audits) - n,
        pass_rate=(len(passes) / n) if n else None,
        acc_pass=acc_pass,
        acc_flag=acc_flag,
        lift_pp=lift,
        mean_p1=_mean(a.certificate.p1 for a in scored),
        mean_p0=_mean(a.certificate.p0_by_null[a.certificate.worst_null] for a in scored),
    )


@dataclass(frozen=True, slots=True)
class UnusedInfoCertificate:
    """Lower bound on information present upstream but absent at the
    readout: probe bound minus readout bound, in nats."""

    probe_mi_lower: float
    used_mi_lower: float
    unused_lower: float
    certified: bool
    proxy: bool

    def describe(self) -> str:
        if self.certified:
            tag = " (proxy)" if self.proxy else ""
            return f"unused information >= {self.unused_lower:.4f} nats{tag}"
        return "no certificate"


def probe_comparator(
    probe_mi_lower: float, used_mi_lower: float, *, proxy: bool = False
) -> UnusedInfoCertificate:
    """Compare an upstream probe bound against the readout bound.

    A positive difference certifies information that reached the probed
    site but not the output. Zero or negative yields no certificate.
    Set proxy=True when the probe accuracy was conditioned on errors,
    which makes the comparison interpretable rather than formal.
    """
    for name, v in (("probe_mi_lower", probe_mi_lower), ("used_mi_lower", used_mi_lower)):
        if not math.isfinite(v) or v < 0:
            raise DomainError(f"{name} must be a finite nonnegative nat value, got {v!r}")
    gap = probe_mi_lower - used_mi_lower
    return UnusedInfoCertificate(
        probe_mi_lower=probe_mi_lower,
        used_mi_lower=used_mi_lower,
        unused_lower=gap,
        certified=gap > 0,
        proxy=proxy,
    )


def audit_instance(
    provider,
    instance: TaskInstance,
    family: NullFamily = DEFAULT_FAMILY,
    tau: float = DEFAULT_TAU,
    *,
    mode: str = "auto",
) -> BudgetCertificate:
    """Live budget audit of one task instance.

    p1 is measured on the full instance, the envelope on its scrubbed
    variants. Operator failures mark the certificate incomplete.
    """
    if hasattr(provider, "prob_of_target") and mode in ("auto", "probability"):
        p1 = float(provider.prob_of_target(instance))
    else:
        p1 = 1.0 if _greedy_correct(provider, instance) else 0.0
    env = envelope(provider, instance, family, mode=mode)
    if not env.p0_by_null:
        raise DomainError(
            f"every null operator failed for {instance.instance_id}: {dict(env.failed)}"
        )
    return budget_test(
        p1,
        env.p0_by_null,
        tau,
        complete=env.complete,
        failed_nulls=tuple(sorted(env.failed)),
    )


def read_trace_jsonl(path) -> list[TraceStep]:
    """Load a trace: one step object per line."""
    steps: list[TraceStep] = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    d = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DataError(f"{path}:{line_no}: invalid JSON: {exc}") from exc
                steps.append(TraceStep.from_dict(d))
    except OSError as exc:
        raise DataError(f"cannot read trace {path}: {exc}") from exc
    return steps

"""Diagnostics for readout failures in long-context binding.

The library separates two failure stages at a model's readout
position: the answer distribution never concentrating on the candidate
set (stage 2A), and concentrating there but on the wrong candidate
(stage 2B). Around that classification it provides information-budget
certificates (Fano bounds and their inversion, slack decomposition,
Bernoulli divergence budgets, null-family envelopes), a synthetic
binding-task generator with checkpointing and scrubbing interventions,
an exactly-solvable noisy-channel simulator, and a trace auditor that
flags claims whose cited evidence cannot cover their stated
confidence.

All information quantities are nats unless a name says bits.
"""

__version__ = "0.1.0"

from .errors import (
    DataError,
    DomainError,
    DpiViolationWarning,
    GateGapUnavailableError,
    InvariantViolation,
    MissingRecordError,
    ProviderError,
    RoutingAuditError,
    ValueGapUnavailableError,
)
from .info import (
    JointDistribution,
    SlackDecomposition,
    WilsonInterval,
    binary_entropy,
    bits_to_trust,
    entropy,
    fano_invert,
    fano_lower_bound,
    kl_bernoulli,
    mutual_information,
    routing_efficiency,
    slack_decompose,
    wilson_interval,
)
from .stages import (
    LogprobRecord,
    StageOutcome,
    StageSummary,
    Verdict,
    aggregate,
    classify,
    mi_bound_from_cand_acc,
)
from .channels import (
    ChainSpec,
    CopyOrNoiseChannel,
    DiscreteChannel,
    SdpiReport,
    mi_trace,
    push_joint,
    symmetric_channel,
    uniform_prior,
    verify_sdpi_contraction,
)
from .tasks import (
    CandidatePool,
    CheckpointMode,
    EvidenceSpan,
    FillerKind,
    ScrubOp,
    TaskInstance,
    TaskKind,
    build_pool,
    derive_seed,
    generate,
    insert_checkpoints,
    scrub,
)
from .providers import (
    BiasParams,
    DiskCache,
    FileCacheProvider,
    HttpProvider,
    SimulatedProvider,
)
from .audit import (
    DEFAULT_FAMILY,
    DEFAULT_TAU,
    AuditSummary,
    BudgetCertificate,
    NullFamily,
    PseudoPrior,
    StepAudit,
    TraceStep,
    UnusedInfoCertificate,
    audit_instance,
    audit_trace,
    budget_test,
    envelope,
    probe_comparator,
    pseudo_prior,
    pseudo_prior_rate,
    summarize,
)
from .report import (
    SCHEMA_VERSION,
    BudgetRow,
    CheckpointRow,
    ConditionKey,
    StageRow,
    bits_to_nats,
    emit_budget_csv,
    emit_checkpoint_csv,
    emit_series_json,
    emit_stage_csv,
    nats_to_bits,
)

__all__ = [
    "__version__",
    # errors
    "RoutingAuditError",
    "DomainError",
    "DataError",
    "ProviderError",
    "MissingRecordError",
    "InvariantViolation",
    "GateGapUnavailableError",
    "ValueGapUnavailableError",
    "DpiViolationWarning",
    # information measures
    "entropy",
    "binary_entropy",
    "kl_bernoulli",
    "bits_to_trust",
    "JointDistribution",
    "mutual_information",
    "fano_lower_bound",
    "fano_invert",
    "SlackDecomposition",
    "slack_decompose",
    "routing_efficiency",
    "WilsonInterval",
    "wilson_interval",
    # stage classification
    "LogprobRecord",
    "StageOutcome",
    "StageSummary",
    "Verdict",
    "classify",
    "aggregate",
    "mi_bound_from_cand_acc",
    # channels
    "DiscreteChannel",
    "CopyOrNoiseChannel",
    "ChainSpec",
    "SdpiReport",
    "symmetric_channel",
    "uniform_prior",
    "push_joint",
    "mi_trace",
    "verify_sdpi_contraction",
    # tasks
    "TaskKind",
    "FillerKind",
    "CheckpointMode",
    "ScrubOp",
    "CandidatePool",
    "EvidenceSpan",
    "TaskInstance",
    "derive_seed",
    "build_pool",
    "generate",
    "insert_checkpoints",
    "scrub",
    # providers
    "BiasParams",
    "SimulatedProvider",
    "FileCacheProvider",
    "DiskCache",
    "HttpProvider",
    # audits
    "DEFAULT_TAU",
    "DEFAULT_FAMILY",
    "NullFamily",
    "PseudoPrior",
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
    # reporting
    "SCHEMA_VERSION",
    "ConditionKey",
    "StageRow",
    "CheckpointRow",
    "BudgetRow",
    "emit_stage_csv",
    "emit_checkpoint_csv",
    "emit_budget_csv",
    "emit_series_json",
    "nats_to_bits",
    "bits_to_nats",
]

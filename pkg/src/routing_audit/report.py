"""Deterministic table emission: stage, checkpoint, and budget CSVs,
plus plot-ready JSON series.

Formatting rules are fixed so golden-file tests can assert byte
equality: rates get 3 decimals, gaps 2, nat quantities 4, lift 1;
missing values render as empty cells and infinite divergences as
"inf". Rows are sorted by their condition key, line endings are "\\n",
output is UTF-8 and newline-terminated, and every row carries the
schema version (mixed versions refuse to emit).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .audit import AuditSummary, BudgetCertificate
from .errors import DataError
from .info import WilsonInterval
from .stages import StageSummary, mi_bound_from_cand_acc

__all__ = [
    "SCHEMA_VERSION",
    "ConditionKey",
    "StageRow",
    "CheckpointRow",
    "BudgetRow",
    "emit_stage_csv",
    "emit_checkpoint_csv",
    "emit_budget_csv",
    "emit_series_json",
    "parse_csv",
    "cert_to_dict",
    "nats_to_bits",
    "bits_to_nats",
]

SCHEMA_VERSION = 1

_LN2 = math.log(2.0)


def nats_to_bits(x: float) -> float:
    return x / _LN2


def bits_to_nats(x: float) -> float:
    return x * _LN2


def _fmt_rate(x: float | None) -> str:
    return "" if x is None else f"{x:.3f}"


def _fmt_gap(x: float | None) -> str:
    return "" if x is None else f"{x:.2f}"


def _fmt_nats(x: float | None) -> str:
    if x is None:
        return ""
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.4f}"


def _fmt_lift(x: float | None) -> str:
    return "" if x is None else f"{x:.1f}"


def _fmt_int(x: int | None) -> str:
    return "" if x is None else str(int(x))


@dataclass(frozen=True, slots=True, order=True)
class ConditionKey:
    """One table cell: provider, task, distance, filler, variant, seed.

    variant distinguishes intervention arms of the same generation
    config ("base", "oracle@128", "no_evidence", ...). Ordering is the
    field tuple, so sorted rows are stable across runs.
    """

    provider: str
    task: str
    k: int
    filler: str
    variant: str = "base"
    seed: int = 0

    def as_string(self) -> str:
        return f"{self.provider}/{self.task}/k{self.k}/{self.filler}/{self.variant}/s{self.seed}"


def _ci(iv: WilsonInterval | None) -> tuple[float | None, float | None]:
    if iv is None:
        return None, None
    return iv.lower, iv.upper


@dataclass(frozen=True, slots=True)
class StageRow:
    """One aggregated classification condition."""

    key: ConditionKey
    n: int
    acc: float | None
    acc_lo: float | None
    acc_hi: float | None
    cand_acc: float | None
    cand_lo: float | None
    cand_hi: float | None
    frac_2a: float | None
    frac_2b: float | None
    gate_gap: float | None
    value_gap: float | None
    tie_rate: float | None
    mi_bound_nats: float | None
    schema: int = SCHEMA_VERSION

    @classmethod
    def from_summary(cls, key: ConditionKey, s: StageSummary, m: int) -> "StageRow":
        acc_lo, acc_hi = _ci(s.acc_ci)
        cand_lo, cand_hi = _ci(s.cand_acc_ci)
        mi = None
        if s.cand_acc is not None and m >= 2:
            mi = mi_bound_from_cand_acc(s.cand_acc, m)
        return cls(
            key=key,
            n=s.n,
            acc=s.acc,
            acc_lo=acc_lo,
            acc_hi=acc_hi,
            cand_acc=s.cand_acc,
            cand_lo=cand_lo,
            cand_hi=cand_hi,
            frac_2a=s.frac_2a,
            frac_2b=s.frac_2b,
            gate_gap=s.mean_gate_gap,
            value_gap=s.mean_value_gap,
            tie_rate=s.tie_rate,
            mi_bound_nats=mi,
        )


@dataclass(frozen=True, slots=True)
class CheckpointRow:
    """Paired baseline/checkpoint accuracies on identical seeds."""

    key: ConditionKey  # variant holds "<mode>@<every>"
    n: int
    baseline_acc: float | None
    baseline_lo: float | None
    baseline_hi: float | None
    checkpoint_acc: float | None
    checkpoint_lo: float | None
    checkpoint_hi: float | None
    delta_acc: float | None
    value_gap_base: float | None
    value_gap_chk: float | None
    schema: int = SCHEMA_VERSION


@dataclass(frozen=True, slots=True)
class BudgetRow:
    """One audit summary at one threshold."""

    label: str
    tau: float
    n: int
    n_unauditable: int
    pass_rate: float | None
    acc_pass: float | None
    acc_flag: float | None
    lift_pp: float | None
    mean_p1: float | None
    mean_p0: float | None
    schema: int = SCHEMA_VERSION

    @classmethod
    def from_summary(cls, label: str, tau: float, s: AuditSummary) -> "BudgetRow":
        return cls(
            label=label,
            tau=tau,
            n=s.n,
            n_unauditable=s.n_unauditable,
            pass_rate=s.pass_rate,
            acc_pass=s.acc_pass,
            acc_flag=s.acc_flag,
            lift_pp=s.lift_pp,
            mean_p1=s.mean_p1,
            mean_p0=s.mean_p0,
        )


def _check_schema(rows: Sequence) -> None:
    versions = {r.schema for r in rows}
    if len(versions) > 1:
        raise DataError(f"mixed schema versions in one table: {sorted(versions)}")
    if versions and versions != {SCHEMA_VERSION}:
        raise DataError(f"unsupported schema version {versions.pop()} (writer is {SCHEMA_VERSION})")


def _emit(header: list[str], lines: Iterable[list[str]]) -> bytes:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for cells in lines:
        buf.write(",".join(cells) + "\n")
    return buf.getvalue().encode("utf-8")


_STAGE_HEADER = [
    "schema", "provider", "task", "k", "filler", "variant", "seed", "n",
    "acc", "acc_ci_lo", "acc_ci_hi",
    "cand_acc", "cand_ci_lo", "cand_ci_hi",
    "frac_2a", "frac_2b", "gate_gap", "value_gap", "tie_rate", "mi_bound_nats",
]


def emit_stage_csv(rows: Sequence[StageRow]) -> bytes:
    """Stage classification table, sorted by condition key."""
    _check_schema(rows)
    lines = []
    for r in sorted(rows, key=lambda r: r.key):
        lines.append([
            str(r.schema), r.key.provider, r.key.task, str(r.key.k), r.key.filler,
            r.key.variant, str(r.key.seed), str(r.n),
            _fmt_rate(r.acc), _fmt_rate(r.acc_lo), _fmt_rate(r.acc_hi),
            _fmt_rate(r.cand_acc), _fmt_rate(r.cand_lo), _fmt_rate(r.cand_hi),
            _fmt_rate(r.frac_2a), _fmt_rate(r.frac_2b),
            _fmt_gap(r.gate_gap), _fmt_gap(r.value_gap),
            _fmt_rate(r.tie_rate), _fmt_nats(r.mi_bound_nats),
        ])
    return _emit(_STAGE_HEADER, lines)


_CHECKPOINT_HEADER = [
    "schema", "provider", "task", "k", "filler", "variant", "seed", "n",
    "baseline_acc", "baseline_ci_lo", "baseline_ci_hi",
    "checkpoint_acc", "checkpoint_ci_lo", "checkpoint_ci_hi",
    "delta_acc", "value_gap_base", "value_gap_chk",
]


def emit_checkpoint_csv(rows: Sequence[CheckpointRow]) -> bytes:
    """Checkpoint intervention table; delta_acc = checkpoint - baseline."""
    _check_schema(rows)
    lines = []
    for r in sorted(rows, key=lambda r: r.key):
        lines.append([
            str(r.schema), r.key.provider, r.key.task, str(r.key.k), r.key.filler,
            r.key.variant, str(r.key.seed), str(r.n),
            _fmt_rate(r.baseline_acc), _fmt_rate(r.baseline_lo), _fmt_rate(r.baseline_hi),
            _fmt_rate(r.checkpoint_acc), _fmt_rate(r.checkpoint_lo), _fmt_rate(r.checkpoint_hi),
            _fmt_rate(r.delta_acc), _fmt_gap(r.value_gap_base), _fmt_gap(r.value_gap_chk),
        ])
    return _emit(_CHECKPOINT_HEADER, lines)


_BUDGET_HEADER = [
    "schema", "label", "tau", "n", "n_unauditable",
    "pass_rate", "acc_pass", "acc_flag", "lift_pp", "mean_p1", "mean_p0",
]


def emit_budget_csv(rows: Sequence[BudgetRow]) -> bytes:
    """Audit summary table; a tau sweep groups into one stanza per tau."""
    _check_schema(rows)
    lines = []
    for r in sorted(rows, key=lambda r: (r.tau, r.label)):
        lines.append([
            str(r.schema), r.label, _fmt_rate(r.tau), str(r.n), str(r.n_unauditable),
            _fmt_rate(r.pass_rate), _fmt_rate(r.acc_pass), _fmt_rate(r.acc_flag),
            _fmt_lift(r.lift_pp), _fmt_rate(r.mean_p1), _fmt_rate(r.mean_p0),
        ])
    return _emit(_BUDGET_HEADER, lines)


def emit_series_json(rows: Sequence[StageRow], quantity: str = "acc") -> bytes:
    """Plot-ready series of ``quantity`` against k, one series per
    (provider, task, filler, variant), each point with its Wilson CI."""
    if quantity not in ("acc", "cand_acc"):
        raise DataError(f"unknown series quantity {quantity!r}")
    _check_schema(rows)
    series: dict[str, list[dict]] = {}
    for r in sorted(rows, key=lambda r: r.key):
        label = f"{r.key.provider}/{r.key.task}/{r.key.filler}/{r.key.variant}"
        if quantity == "acc":
            est, lo, hi = r.acc, r.acc_lo, r.acc_hi
        else:
            est, lo, hi = r.cand_acc, r.cand_lo, r.cand_hi
        if est is None:
            continue
        series.setdefault(label, []).append(
            {"k": r.key.k, "estimate": est, "ci_lower": lo, "ci_upper": hi, "n": r.n}
        )
    doc = {
        "schema": SCHEMA_VERSION,
        "quantity": quantity,
        "series": [
            {"label": label, "points": sorted(pts, key=lambda p: p["k"])}
            for label, pts in sorted(series.items())
        ],
    }
    return (json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n").encode("utf-8")


def parse_csv(data: bytes) -> list[dict[str, str]]:
    """Parse an emitted table back into string-valued row dicts."""
    text = data.decode("utf-8")
    return list(csv.DictReader(io.StringIO(text)))


def _json_safe(x):
    if isinstance(x, float) and not math.isfinite(x):
        if math.isnan(x):
            return "nan"
        return "inf" if x > 0 else "-inf"
    return x


def cert_to_dict(cert: BudgetCertificate) -> dict:
    """JSON-safe dict for one certificate; infinities become strings."""
    return {
        "p1": cert.p1,
        "threshold": cert.threshold,
        "threshold_source": cert.threshold_source,
        "p0_by_null": dict(sorted(cert.p0_by_null.items())),
        "p0_min": cert.p0_min,
        "p0_max": cert.p0_max,
        "req_bits_by_null": {k: _json_safe(v) for k, v in sorted(cert.req_bits_by_null.items())},
        "obs_bits_by_null": {k: _json_safe(v) for k, v in sorted(cert.obs_bits_by_null.items())},
        "req_bits": _json_safe(cert.req_bits),
        "obs_bits": _json_safe(cert.obs_bits),
        "worst_null": cert.worst_null,
        "verdict": cert.verdict,
        "complete": cert.complete,
        "failed_nulls": list(cert.failed_nulls),
    }

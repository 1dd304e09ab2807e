"""Synthetic binding tasks: generation, checkpoint insertion, scrubbing.

An instance is a whitespace-delimited token sequence with three parts:
binding statements (``KEY1 = [ apple ]``), filler blocks, and a query
whose last token is the opening bracket, so the readout position is the
end of the sequence. Evidence spans record where each binding lives;
scrub operators destroy binding evidence while preserving the template,
and checkpoint insertion restates a binding inside the tail filler
block at a fixed interval.

Everything is deterministic in (seed, trial): generation derives an
independent stream per instance, so reruns are byte-identical.
"""

from __future__ import annotations

import enum
import hashlib
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable

from . import words
from .errors import DataError, DomainError

__all__ = [
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
]

import random

SPRINKLE_RATE = 0.02  # fraction of decoy-block filler positions re-rolled


class TaskKind(enum.Enum):
    COMPETING_VARS = "competing_vars"
    PRIMACY_RECENCY = "primacy_recency"
    DECOY_INJECTION = "decoy_injection"


class FillerKind(enum.Enum):
    REPEAT = "repeat"
    COHERENT = "coherent"
    RANDOM = "random"
    DECOY_HEAVY = "decoy_heavy"


class CheckpointMode(enum.Enum):
    ORACLE = "oracle"
    SHAM = "sham"
    WRONG = "wrong"


class ScrubOp(enum.Enum):
    REDACT_SPAN = "redact_span"
    DELETE_SPAN = "delete_span"
    MASK_SAME_LEN = "mask_same_len"
    NO_EVIDENCE = "no_evidence"


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from heterogeneous parts (hash-based, so
    independent streams never depend on call order or platform)."""
    blob = "|".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "big")


@dataclass(frozen=True, slots=True)
class CandidatePool:
    """Seeded sample of the bundled pool words, with stable token ids."""

    words: tuple[str, ...]
    ids: tuple[int, ...]
    seed: int

    def __len__(self) -> int:
        return len(self.words)


def build_pool(seed: int, size: int) -> CandidatePool:
    """Sample ``size`` distinct pool words. Deterministic in seed."""
    if not isinstance(size, int) or size < 2:
        raise DomainError(f"pool size must be an integer >= 2, got {size!r}")
    if size > len(words.CANDIDATE_WORDS):
        raise DomainError(
            f"pool size {size} exceeds the bundled vocabulary "
            f"({len(words.CANDIDATE_WORDS)} words)"
        )
    rng = random.Random(derive_seed("pool", seed, size))
    sample = tuple(rng.sample(words.CANDIDATE_WORDS, size))
    return CandidatePool(
        words=sample,
        ids=tuple(words.token_id(w) for w in sample),
        seed=seed,
    )


@dataclass(frozen=True, slots=True)
class EvidenceSpan:
    """Half-open token range [start, end) holding one statement.

    kind is "binding" for original assignments and "checkpoint" for
    inserted restatements. value is the bound token, or None once a
    scrub placeholder replaced it (and always None for sham
    checkpoints). value_pos is the token index of the value inside the
    instance, when one exists.
    """

    label: str
    kind: str
    start: int
    end: int
    key: str
    value: str | None
    value_pos: int | None

    def shifted(self, delta: int) -> "EvidenceSpan":
        return replace(
            self,
            start=self.start + delta,
            end=self.end + delta,
            value_pos=None if self.value_pos is None else self.value_pos + delta,
        )


@dataclass(frozen=True, slots=True)
class TaskInstance:
    """One rendered binding task.

    tokens is the full sequence including the query; the final token is
    the opening bracket, so the readout position is len(tokens).
    candidates is sorted by token id; target and competitor are members.
    tail_start/tail_end delimit the filler block that checkpoint
    insertion targets.
    """

    instance_id: str
    task: TaskKind
    k: int
    filler: FillerKind
    seed: int
    trial: int
    tokens: tuple[str, ...]
    query_start: int
    query_key: str
    spans: tuple[EvidenceSpan, ...]
    candidates: tuple[str, ...]
    target: str
    competitor: str
    tail_start: int
    tail_end: int
    checkpoint_every: int | None = None
    checkpoint_mode: CheckpointMode | None = None
    n_checkpoints: int = 0
    scrub_op: ScrubOp | None = None
    scrubbed_from: str | None = None

    def __post_init__(self):
        if self.target not in self.candidates or self.competitor not in self.candidates:
            raise DomainError("target and competitor must be members of the candidate set")
        if self.tokens and self.tokens[-1] != "[":
            raise DomainError("the query must end at the opening readout bracket")

    @property
    def rendered(self) -> str:
        return " ".join(self.tokens)

    @property
    def candidate_ids(self) -> tuple[int, ...]:
        return tuple(words.token_id(w) for w in self.candidates)

    @property
    def target_id(self) -> int:
        return words.token_id(self.target)

    @property
    def competitor_id(self) -> int:
        return words.token_id(self.competitor)

    def value_spans(self) -> tuple[EvidenceSpan, ...]:
        """Spans still carrying a bound value."""
        return tuple(s for s in self.spans if s.value is not None)

    def target_evidence(self) -> tuple[EvidenceSpan, ...]:
        """Spans whose surviving value is the target."""
        return tuple(s for s in self.spans if s.value == self.target)

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "task": self.task.value,
            "k": self.k,
            "filler": self.filler.value,
            "seed": self.seed,
            "trial": self.trial,
            "tokens": list(self.tokens),
            "query_start": self.query_start,
            "query_key": self.query_key,
            "spans": [
                {
                    "label": s.label,
                    "kind": s.kind,
                    "start": s.start,
                    "end": s.end,
                    "key": s.key,
                    "value": s.value,
                    "value_pos": s.value_pos,
                }
                for s in self.spans
            ],
            "candidates": list(self.candidates),
            "target": self.target,
            "competitor": self.competitor,
            "tail_start": self.tail_start,
            "tail_end": self.tail_end,
            "checkpoint_every": self.checkpoint_every,
            "checkpoint_mode": None if self.checkpoint_mode is None else self.checkpoint_mode.value,
            "n_checkpoints": self.n_checkpoints,
            "scrub_op": None if self.scrub_op is None else self.scrub_op.value,
            "scrubbed_from": self.scrubbed_from,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TaskInstance":
        try:
            return cls(
                instance_id=d["instance_id"],
                task=TaskKind(d["task"]),
                k=int(d["k"]),
                filler=FillerKind(d["filler"]),
                seed=int(d["seed"]),
                trial=int(d["trial"]),
                tokens=tuple(d["tokens"]),
                query_start=int(d["query_start"]),
                query_key=d["query_key"],
                spans=tuple(
                    EvidenceSpan(
                        label=s["label"],
                        kind=s["kind"],
                        start=int(s["start"]),
                        end=int(s["end"]),
                        key=s["key"],
                        value=s["value"],
                        value_pos=None if s["value_pos"] is None else int(s["value_pos"]),
                    )
                    for s in d["spans"]
                ),
                candidates=tuple(d["candidates"]),
                target=d["target"],
                competitor=d["competitor"],
                tail_start=int(d["tail_start"]),
                tail_end=int(d["tail_end"]),
                checkpoint_every=d.get("checkpoint_every"),
                checkpoint_mode=(
                    None if d.get("checkpoint_mode") is None else CheckpointMode(d["checkpoint_mode"])
                ),
                n_checkpoints=int(d.get("n_checkpoints", 0)),
                scrub_op=None if d.get("scrub_op") is None else ScrubOp(d["scrub_op"]),
                scrubbed_from=d.get("scrubbed_from"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed task instance record: {exc}") from exc


def _binding(key: str, value: str) -> list[str]:
    return [key, "=", "[", value, "]"]


_BINDING_VALUE_OFFSET = 3
_CHECKPOINT_VALUE_OFFSET = 5


def _checkpoint_stmt(key: str, value: str) -> list[str]:
    return ["CHECKPOINT", ":", key, "=", "[", value, "]"]


def _filler_block(
    kind: FillerKind,
    length: int,
    rng: random.Random,
    *,
    competitor: str,
    decoy_reps: int,
    with_decoys: bool,
    exclude: frozenset[str],
) -> list[str]:
    if length == 0:
        return []
    if kind is FillerKind.REPEAT:
        return [words.REPEAT_TOKEN] * length
    if kind is FillerKind.COHERENT:
        reps = length // len(words.COHERENT_TOKENS) + 1
        return list((words.COHERENT_TOKENS * reps)[:length])
    if kind is FillerKind.RANDOM:
        return [rng.choice(words.FILLER_WORDS) for _ in range(length)]
    if kind is not FillerKind.DECOY_HEAVY:
        raise DomainError(f"unsupported filler kind {kind!r}")

    block = [words.REPEAT_TOKEN] * length
    sprinkle_pool = [w for w in words.FILLER_WORDS if w not in exclude]
    decoy_positions: set[int] = set()
    if with_decoys and decoy_reps > 0:
        # Floor-spaced positions; at most one decoy per slot, so fewer fit
        # when the block is shorter than the requested repetitions.
        for i in range(1, decoy_reps + 1):
            decoy_positions.add(min(length - 1, i * (length + 1) // (decoy_reps + 1)))
        for p in decoy_positions:
            block[p] = competitor
    # Light texture: a sparse seeded sprinkling of non-candidate words.
    for p in range(length):
        if p in decoy_positions:
            continue
        if rng.random() < SPRINKLE_RATE:
            block[p] = rng.choice(sprinkle_pool)
    return block


def generate(
    task: TaskKind,
    k: int,
    filler: FillerKind,
    seed: int,
    *,
    pool: CandidatePool,
    trial: int = 0,
    decoy_reps: int = 12,
    n_distractors: int = 48,
) -> TaskInstance:
    """Render one task instance, deterministically in (seed, trial).

    The candidate set holds the target, the competitor, and
    ``n_distractors`` sampled distractors. Decoy repetitions of the
    competitor appear only in the tail filler block and only under
    DECOY_HEAVY filler.
    """
    if not isinstance(k, int) or k < 0:
        raise DomainError(f"filler length k must be a nonnegative integer, got {k!r}")
    if not isinstance(decoy_reps, int) or decoy_reps < 0:
        raise DomainError(f"decoy_reps must be a nonnegative integer, got {decoy_reps!r}")
    if not isinstance(n_distractors, int) or n_distractors < 1:
        raise DomainError(f"n_distractors must be a positive integer, got {n_distractors!r}")
    n_words = n_distractors + 2
    if n_words > len(pool):
        raise DomainError(
            f"need {n_words} distinct words (target, competitor, {n_distractors} "
            f"distractors) but the pool holds {len(pool)}"
        )

    rng = random.Random(derive_seed("gen", seed, task.value, k, filler.value, trial))
    sample = rng.sample(pool.words, n_words)
    target, competitor = sample[0], sample[1]
    middle = sample[2] if task is TaskKind.PRIMACY_RECENCY else None
    candidates = tuple(sorted(sample, key=words.token_id))
    exclude = frozenset(sample)

    def block(with_decoys: bool, length: int) -> list[str]:
        return _filler_block(
            filler,
            length,
            rng,
            competitor=competitor,
            decoy_reps=decoy_reps,
            with_decoys=with_decoys,
            exclude=exclude,
        )

    tokens: list[str] = []
    spans: list[EvidenceSpan] = []

    def add_binding(label: str, key: str, value: str) -> None:
        start = len(tokens)
        tokens.extend(_binding(key, value))
        spans.append(
            EvidenceSpan(
                label=label,
                kind="binding",
                start=start,
                end=len(tokens),
                key=key,
                value=value,
                value_pos=start + _BINDING_VALUE_OFFSET,
            )
        )

    if task is TaskKind.COMPETING_VARS:
        query_key = "KEY1"
        add_binding("key1", "KEY1", target)
        tail_start = len(tokens)
        tokens.extend(block(True, k))
        tail_end = len(tokens)
        add_binding("key2", "KEY2", competitor)
        query = ["What", "is", "KEY1", "?", "KEY1", "=", "["]
    elif task is TaskKind.DECOY_INJECTION:
        query_key = "KEY1"
        add_binding("key1", "KEY1", target)
        tail_start = len(tokens)
        tokens.extend(block(True, k))
        tail_end = len(tokens)
        query = ["What", "is", "KEY1", "?", "KEY1", "=", "["]
    elif task is TaskKind.PRIMACY_RECENCY:
        query_key = "KEY"
        assert middle is not None
        add_binding("key@1", "KEY", target)
        tokens.extend(block(False, k))
        add_binding("key@2", "KEY", middle)
        tokens.extend(block(False, k))
        add_binding("key@3", "KEY", competitor)
        tail_start = len(tokens)
        tokens.extend(block(True, k))
        tail_end = len(tokens)
        query = ["What", "was", "the", "FIRST", "value", "of", "KEY", "?", "KEY", "=", "["]
    else:
        raise DomainError(f"unsupported task kind {task!r}")

    query_start = len(tokens)
    tokens.extend(query)

    return TaskInstance(
        instance_id=f"{task.value}-k{k}-{filler.value}-s{seed}-t{trial}",
        task=task,
        k=k,
        filler=filler,
        seed=seed,
        trial=trial,
        tokens=tuple(tokens),
        query_start=query_start,
        query_key=query_key,
        spans=tuple(spans),
        candidates=candidates,
        target=target,
        competitor=competitor,
        tail_start=tail_start,
        tail_end=tail_end,
    )


def insert_checkpoints(instance: TaskInstance, every: int, mode: CheckpointMode) -> TaskInstance:
    """Insert a restatement after every ``every`` tokens of the tail
    filler block.

    ORACLE restates the queried binding with the true value, WRONG with
    the competitor, SHAM with a format-matched statement containing no
    candidate token. floor(block length / every) statements are
    inserted; if none fit a warning is emitted and the instance is
    returned with checkpoint bookkeeping only. Original spans keep their
    content, offsets after the insertion point shift.
    """
    if not isinstance(every, int) or every < 1:
        raise DomainError(f"checkpoint interval must be a positive integer, got {every!r}")
    if instance.n_checkpoints:
        raise DomainError("instance already carries checkpoints")
    if instance.scrub_op is not None:
        raise DomainError("scrubbed instances cannot take checkpoints; insert before scrubbing")

    if mode is CheckpointMode.ORACLE:
        stmt = _checkpoint_stmt(instance.query_key, instance.target)
        value: str | None = instance.target
    elif mode is CheckpointMode.WRONG:
        stmt = _checkpoint_stmt(instance.query_key, instance.competitor)
        value = instance.competitor
    else:
        stmt = _checkpoint_stmt("NOTE", words.SHAM_VALUE_TOKEN)
        value = None

    block_len = instance.tail_end - instance.tail_start
    n = block_len // every
    suffix = f"+{mode.value}{every}"
    if n == 0:
        warnings.warn(
            f"checkpoint interval {every} exceeds the tail filler block "
            f"({block_len} tokens); no checkpoints inserted",
            stacklevel=2,
        )
        return replace(
            instance,
            instance_id=instance.instance_id + suffix,
            checkpoint_every=every,
            checkpoint_mode=mode,
            n_checkpoints=0,
        )

    tokens = list(instance.tokens[: instance.tail_start])
    block = instance.tokens[instance.tail_start : instance.tail_end]
    new_spans: list[EvidenceSpan] = [s for s in instance.spans if s.end <= instance.tail_start]
    for i in range(1, n + 1):
        tokens.extend(block[(i - 1) * every : i * every])
        start = len(tokens)
        tokens.extend(stmt)
        new_spans.append(
            EvidenceSpan(
                label=f"ckpt{i}",
                kind="checkpoint",
                start=start,
                end=len(tokens),
                key=stmt[2],
                value=value,
                value_pos=None if value is None else start + _CHECKPOINT_VALUE_OFFSET,
            )
        )
    tokens.extend(block[n * every :])
    delta = n * len(stmt)
    new_tail_end = instance.tail_end + delta
    for s in instance.spans:
        if s.end <= instance.tail_start:
            continue
        if s.start < instance.tail_end:
            raise DataError(f"span {s.label} overlaps the tail filler block")
        new_spans.append(s.shifted(delta))
    tokens.extend(instance.tokens[instance.tail_end :])

    out = replace(
        instance,
        instance_id=instance.instance_id + suffix,
        tokens=tuple(tokens),
        query_start=instance.query_start + delta,
        spans=tuple(sorted(new_spans, key=lambda s: s.start)),
        tail_end=new_tail_end,
        checkpoint_every=every,
        checkpoint_mode=mode,
        n_checkpoints=n,
    )
    return out


def _delete_ranges(instance: TaskInstance, doomed: list[EvidenceSpan]) -> TaskInstance:
    doomed_sorted = sorted(doomed, key=lambda s: s.start)
    doomed_labels = {s.label for s in doomed_sorted}
    keep = [i for i in range(len(instance.tokens))
            if not any(s.start <= i < s.end for s in doomed_sorted)]
    old_to_new = {old: new for new, old in enumerate(keep)}

    def shift(pos: int) -> int:
        # New index of the first surviving token at or after pos.
        removed_before = sum(min(s.end, pos) - min(s.start, pos) for s in doomed_sorted)
        return pos - removed_before

    new_spans = []
    for s in instance.spans:
        if s.label in doomed_labels:
            continue
        new_spans.append(
            replace(
                s,
                start=shift(s.start),
                end=shift(s.end),
                value_pos=None if s.value_pos is None else old_to_new[s.value_pos],
            )
        )
    return replace(
        instance,
        tokens=tuple(instance.tokens[i] for i in keep),
        query_start=shift(instance.query_start),
        tail_start=shift(instance.tail_start),
        tail_end=shift(instance.tail_end),
        spans=tuple(new_spans),
    )


def scrub(instance: TaskInstance, op: ScrubOp) -> TaskInstance:
    """Destroy binding evidence while preserving the task structure.

    REDACT_SPAN and MASK_SAME_LEN replace the bound value of every span
    still carrying the target with a placeholder token (REDACTED or
    XXXX), leaving the key line and delimiters in place and the token
    count unchanged. DELETE_SPAN removes those spans outright.
    NO_EVIDENCE deletes every value-carrying span, the target's and the
    competitor's alike. Query, candidate set, target, and competitor
    fields are never touched; provenance is recorded on the result.
    """
    if instance.scrub_op is not None:
        raise DomainError("instance is already scrubbed")

    if op is ScrubOp.NO_EVIDENCE:
        doomed = list(instance.value_spans())
    else:
        doomed = list(instance.target_evidence())

    out_id = f"{instance.instance_id}+{op.value}"
    if op in (ScrubOp.REDACT_SPAN, ScrubOp.MASK_SAME_LEN):
        placeholder = words.REDACTED_TOKEN if op is ScrubOp.REDACT_SPAN else words.MASK_TOKEN
        tokens = list(instance.tokens)
        new_spans = []
        doomed_labels = {s.label for s in doomed}
        for s in instance.spans:
            if s.label in doomed_labels:
                assert s.value_pos is not None
                tokens[s.value_pos] = placeholder
                new_spans.append(replace(s, value=None))
            else:
                new_spans.append(s)
        scrubbed = replace(instance, tokens=tuple(tokens), spans=tuple(new_spans))
    else:
        scrubbed = _delete_ranges(instance, doomed)

    return replace(
        scrubbed,
        instance_id=out_id,
        scrub_op=op,
        scrubbed_from=instance.instance_id,
    )


def write_jsonl(instances: Iterable[TaskInstance], path) -> int:
    """Serialize instances one JSON object per line. Returns the count."""
    import json

    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(inst.to_dict(), sort_keys=True) + "\n")
            n += 1
    return n


def read_jsonl(path) -> list[TaskInstance]:
    import json

    out = []
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
                out.append(TaskInstance.from_dict(d))
    except OSError as exc:
        raise DataError(f"cannot read instances {path}: {exc}") from exc
    return out

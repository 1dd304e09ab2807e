"""Task generation: determinism, template structure, decoy placement,
checkpoint insertion, scrub semantics, serialization."""

import json

import pytest

from routing_audit.errors import DomainError
from routing_audit.tasks import (
    CheckpointMode,
    FillerKind,
    ScrubOp,
    TaskInstance,
    TaskKind,
    build_pool,
    derive_seed,
    generate,
    insert_checkpoints,
    read_jsonl,
    scrub,
    write_jsonl,
)
from routing_audit.words import CANDIDATE_WORDS, FILLER_WORDS

POOL = build_pool(seed=0, size=50)


def gen(task=TaskKind.COMPETING_VARS, k=64, filler=FillerKind.DECOY_HEAVY, seed=1, **kw):
    return generate(task, k, filler, seed, pool=POOL, **kw)


class TestPool:
    def test_deterministic(self):
        assert build_pool(3, 50) == build_pool(3, 50)
        assert build_pool(3, 50) != build_pool(4, 50)

    def test_distinct_words_with_ids(self):
        p = build_pool(0, 50)
        assert len(set(p.words)) == 50
        assert len(p.ids) == 50
        assert all(w in CANDIDATE_WORDS for w in p.words)

    def test_size_validation(self):
        with pytest.raises(DomainError):
            build_pool(0, len(CANDIDATE_WORDS) + 1)
        with pytest.raises(DomainError):
            build_pool(0, 1)


class TestDeriveSeed:
    def test_stable_and_sensitive(self):
        assert derive_seed("a", 1) == derive_seed("a", 1)
        assert derive_seed("a", 1) != derive_seed("a", 2)
        assert derive_seed("a", 12) != derive_seed("a1", 2)


class TestGenerate:
    def test_deterministic(self):
        a = gen(trial=3)
        b = gen(trial=3)
        assert a == b
        assert a.rendered == b.rendered

    def test_trials_differ(self):
        assert gen(trial=0).tokens != gen(trial=1).tokens

    def test_competing_structure(self):
        inst = gen(k=8)
        t = inst.tokens
        # Leading binding, trailing competitor binding, then the query.
        assert t[:3] == ("KEY1", "=", "[") and t[4] == "]"
        assert t[3] == inst.target
        assert t[inst.query_start :] == ("What", "is", "KEY1", "?", "KEY1", "=", "[")
        assert t[-1] == "["
        kv2 = t[inst.tail_end : inst.tail_end + 5]
        assert kv2 == ("KEY2", "=", "[", inst.competitor, "]")
        assert inst.query_key == "KEY1"

    def test_primacy_structure(self):
        inst = gen(task=TaskKind.PRIMACY_RECENCY, k=4, filler=FillerKind.REPEAT)
        keys = [s.key for s in inst.spans]
        vals = [s.value for s in inst.spans]
        assert keys == ["KEY", "KEY", "KEY"]
        assert vals[0] == inst.target
        assert vals[2] == inst.competitor
        assert vals[1] not in (inst.target, inst.competitor)
        assert vals[1] in inst.candidates  # the middle value is a distractor
        assert "FIRST" in inst.tokens[inst.query_start :]

    def test_candidate_set_shape(self):
        inst = gen()
        assert len(inst.candidates) == 50
        assert len(set(inst.candidates)) == 50
        assert inst.target in inst.candidates
        assert inst.competitor in inst.candidates
        assert list(inst.candidate_ids) == sorted(inst.candidate_ids)

    def test_rendered_retokenizes(self):
        inst = gen(k=128, filler=FillerKind.COHERENT)
        assert tuple(inst.rendered.split(" ")) == inst.tokens

    def test_spans_point_at_values(self):
        for task in TaskKind:
            inst = gen(task=task, k=16)
            for s in inst.spans:
                assert inst.tokens[s.value_pos] == s.value
                assert inst.tokens[s.start] == s.key
                assert inst.tokens[s.end - 1] == "]"

    def test_decoy_count_exact(self):
        inst = gen(k=256, decoy_reps=12)
        block = inst.tokens[inst.tail_start : inst.tail_end]
        assert block.count(inst.competitor) == 12
        # Placement follows the documented floor spacing.
        expected = {min(255, i * 257 // 13) for i in range(1, 13)}
        got = {i for i, tok in enumerate(block) if tok == inst.competitor}
        assert got == expected

    def test_decoys_only_with_decoy_filler(self):
        inst = gen(k=256, filler=FillerKind.REPEAT)
        block = inst.tokens[inst.tail_start : inst.tail_end]
        assert block.count(inst.competitor) == 0

    def test_no_candidate_leaks_into_filler(self):
        inst = gen(k=512, decoy_reps=12)
        block = inst.tokens[inst.tail_start : inst.tail_end]
        leaked = [t for t in block if t in inst.candidates and t != inst.competitor]
        assert leaked == []

    def test_sprinkle_words_are_filler(self):
        inst = gen(k=2048, decoy_reps=0)
        block = set(inst.tokens[inst.tail_start : inst.tail_end])
        assert block - set(FILLER_WORDS) - {"the"} == set()

    def test_k_zero(self):
        inst = gen(k=0)
        assert inst.tail_start == inst.tail_end
        assert inst.tokens[3] == inst.target

    def test_validation(self):
        with pytest.raises(DomainError):
            gen(k=-1)
        with pytest.raises(DomainError):
            gen(n_distractors=0)
        with pytest.raises(DomainError):
            gen(n_distractors=49)  # needs 51 words from a 50-word pool

    def test_instance_id_encodes_condition(self):
        inst = gen(k=64, seed=9, trial=2)
        assert inst.instance_id == "competing_vars-k64-decoy_heavy-s9-t2"


class TestCheckpoints:
    def test_count_is_floor(self):
        inst = gen(k=1024, filler=FillerKind.REPEAT)
        chk = insert_checkpoints(inst, 128, CheckpointMode.ORACLE)
        assert chk.n_checkpoints == 1024 // 128 == 8
        assert chk.instance_id.endswith("+oracle128")

    def test_statement_shape_and_spans(self):
        inst = gen(k=256, filler=FillerKind.REPEAT)
        chk = insert_checkpoints(inst, 128, CheckpointMode.ORACLE)
        ckpts = [s for s in chk.spans if s.kind == "checkpoint"]
        assert len(ckpts) == 2
        for s in ckpts:
            assert chk.tokens[s.start : s.end] == (
                "CHECKPOINT", ":", "KEY1", "=", "[", inst.target, "]",
            )
            assert s.value == inst.target

    def test_original_spans_survive_with_shifted_offsets(self):
        inst = gen(k=256)
        chk = insert_checkpoints(inst, 64, CheckpointMode.ORACLE)
        for s in chk.spans:
            if s.kind == "binding":
                assert chk.tokens[s.value_pos] == s.value
                assert chk.tokens[s.start] == s.key
        assert chk.tokens[chk.query_start :] == inst.tokens[inst.query_start :]
        assert chk.query_start == inst.query_start + 4 * 7

    def test_wrong_mode_restates_competitor(self):
        inst = gen(k=128, filler=FillerKind.REPEAT)
        chk = insert_checkpoints(inst, 64, CheckpointMode.WRONG)
        ckpts = [s for s in chk.spans if s.kind == "checkpoint"]
        assert all(s.value == inst.competitor for s in ckpts)

    def test_sham_mode_has_no_candidate_token(self):
        inst = gen(k=128, filler=FillerKind.REPEAT)
        chk = insert_checkpoints(inst, 64, CheckpointMode.SHAM)
        ckpts = [s for s in chk.spans if s.kind == "checkpoint"]
        assert all(s.value is None for s in ckpts)
        inserted = set(chk.tokens) - set(inst.tokens)
        assert inserted & set(inst.candidates) == set()

    def test_interval_longer_than_block_warns(self):
        inst = gen(k=16, filler=FillerKind.REPEAT)
        with pytest.warns(UserWarning, match="no checkpoints inserted"):
            chk = insert_checkpoints(inst, 64, CheckpointMode.ORACLE)
        assert chk.n_checkpoints == 0
        assert chk.tokens == inst.tokens

    def test_reinsertion_rejected(self):
        chk = insert_checkpoints(gen(k=256), 64, CheckpointMode.ORACLE)
        with pytest.raises(DomainError):
            insert_checkpoints(chk, 64, CheckpointMode.ORACLE)

    def test_bad_interval_rejected(self):
        with pytest.raises(DomainError):
            insert_checkpoints(gen(), 0, CheckpointMode.ORACLE)


class TestScrub:
    def test_redact_replaces_value_in_place(self):
        inst = gen(k=32)
        out = scrub(inst, ScrubOp.REDACT_SPAN)
        assert len(out.tokens) == len(inst.tokens)
        span = next(s for s in inst.spans if s.value == inst.target)
        assert out.tokens[span.value_pos] == "REDACTED"
        assert out.target_evidence() == ()
        assert out.scrubbed_from == inst.instance_id
        assert out.instance_id == inst.instance_id + "+redact_span"

    def test_mask_same_length(self):
        inst = gen(k=32)
        out = scrub(inst, ScrubOp.MASK_SAME_LEN)
        assert len(out.tokens) == len(inst.tokens)
        span = next(s for s in inst.spans if s.value == inst.target)
        assert out.tokens[span.value_pos] == "XXXX"

    def test_delete_removes_span_and_reindexes(self):
        inst = gen(k=32)
        out = scrub(inst, ScrubOp.DELETE_SPAN)
        assert len(out.tokens) == len(inst.tokens) - 5
        assert inst.target not in out.tokens
        # The competitor binding survives and its span still points at it.
        comp = next(s for s in out.spans if s.value == inst.competitor)
        assert out.tokens[comp.value_pos] == inst.competitor
        assert out.tokens[out.query_start :] == inst.tokens[inst.query_start :]

    def test_no_evidence_clears_all_value_spans(self):
        inst = gen(k=32)
        out = scrub(inst, ScrubOp.NO_EVIDENCE)
        assert out.value_spans() == ()
        assert inst.target not in out.tokens
        assert "KEY2" not in out.tokens  # competitor binding deleted whole

    def test_no_evidence_spares_sham_checkpoints(self):
        inst = gen(k=256, filler=FillerKind.REPEAT)
        chk = insert_checkpoints(inst, 128, CheckpointMode.SHAM)
        out = scrub(chk, ScrubOp.NO_EVIDENCE)
        assert any(s.kind == "checkpoint" for s in out.spans)
        assert out.value_spans() == ()

    def test_no_evidence_removes_oracle_checkpoints(self):
        inst = gen(k=256, filler=FillerKind.REPEAT)
        chk = insert_checkpoints(inst, 128, CheckpointMode.ORACLE)
        out = scrub(chk, ScrubOp.NO_EVIDENCE)
        assert inst.target not in out.tokens
        assert all(s.kind != "checkpoint" for s in out.spans)

    def test_query_and_fields_untouched(self):
        inst = gen(k=32)
        for op in ScrubOp:
            out = scrub(inst, op)
            assert out.target == inst.target
            assert out.competitor == inst.competitor
            assert out.candidates == inst.candidates
            assert out.tokens[-1] == "["
            assert out.tokens[out.query_start :] == inst.tokens[inst.query_start :]

    def test_double_scrub_rejected(self):
        out = scrub(gen(), ScrubOp.REDACT_SPAN)
        with pytest.raises(DomainError):
            scrub(out, ScrubOp.DELETE_SPAN)

    def test_checkpoint_after_scrub_rejected(self):
        out = scrub(gen(k=256), ScrubOp.REDACT_SPAN)
        with pytest.raises(DomainError):
            insert_checkpoints(out, 64, CheckpointMode.ORACLE)

    def test_primacy_redact_hits_only_target_binding(self):
        inst = gen(task=TaskKind.PRIMACY_RECENCY, k=16, filler=FillerKind.REPEAT)
        out = scrub(inst, ScrubOp.REDACT_SPAN)
        surviving = [s.value for s in out.value_spans()]
        assert inst.target not in surviving
        assert inst.competitor in surviving


class TestSerialization:
    def test_dict_round_trip(self):
        inst = insert_checkpoints(gen(k=128, filler=FillerKind.REPEAT), 64, CheckpointMode.WRONG)
        again = TaskInstance.from_dict(json.loads(json.dumps(inst.to_dict())))
        assert again == inst

    def test_scrubbed_round_trip(self):
        inst = scrub(gen(k=32), ScrubOp.NO_EVIDENCE)
        again = TaskInstance.from_dict(inst.to_dict())
        assert again == inst

    def test_jsonl_round_trip(self, tmp_path):
        instances = [gen(trial=t) for t in range(5)]
        path = tmp_path / "inst.jsonl"
        assert write_jsonl(instances, path) == 5
        assert read_jsonl(path) == instances

    def test_malformed_record_rejected(self):
        from routing_audit.errors import DataError

        with pytest.raises(DataError):
            TaskInstance.from_dict({"instance_id": "x"})

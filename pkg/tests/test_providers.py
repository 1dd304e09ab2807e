"""Providers: simulated bias model, file replay, HTTP client with a
stubbed session, disk cache."""

import json
import math
import threading

import pytest

from routing_audit.errors import DataError, MissingRecordError, ProviderError
from routing_audit.providers import (
    BiasParams,
    DiskCache,
    FileCacheProvider,
    HttpProvider,
    SimulatedProvider,
    score_all,
)
from routing_audit.stages import Verdict, classify
from routing_audit.tasks import CheckpointMode, FillerKind, ScrubOp, TaskKind, build_pool, generate, insert_checkpoints, scrub
from routing_audit.words import token_id

POOL = build_pool(seed=0, size=50)


def gen(task=TaskKind.COMPETING_VARS, k=0, filler=FillerKind.DECOY_HEAVY, seed=2, **kw):
    return generate(task, k, filler, seed, pool=POOL, **kw)


class TestSimulatedProvider:
    def test_deterministic(self):
        inst = gen(k=64)
        a = SimulatedProvider(seed=7).score(inst)
        b = SimulatedProvider(seed=7).score(inst)
        assert a.entries == b.entries

    def test_seed_changes_noise(self):
        inst = gen(k=64)
        a = SimulatedProvider(seed=7).score(inst)
        b = SimulatedProvider(seed=8).score(inst)
        assert a.entries != b.entries

    def test_entries_are_normalized_logprobs(self):
        rec = SimulatedProvider().score(gen(k=16))
        total = sum(math.exp(v) for v in rec.entries.values())
        assert total == pytest.approx(1.0, abs=1e-9)
        assert all(v < 0 for v in rec.entries.values())

    def test_short_distance_is_correct(self):
        rec = SimulatedProvider().score(gen(k=0))
        assert classify(rec).verdict is Verdict.CORRECT

    def test_long_distance_with_decoys_is_2b(self):
        rec = SimulatedProvider().score(gen(k=1024))
        out = classify(rec)
        assert out.verdict is Verdict.STAGE_2B
        assert out.top_token == gen(k=1024).competitor_id

    def test_long_distance_without_decoys_is_2a(self):
        # With no competitor reinforcement the hedge tokens win.
        rec = SimulatedProvider().score(gen(k=4096, filler=FillerKind.REPEAT))
        assert classify(rec).verdict is Verdict.STAGE_2A

    def test_oracle_checkpoint_restores_target(self):
        inst = gen(k=1024)
        chk = insert_checkpoints(inst, 128, CheckpointMode.ORACLE)
        assert classify(SimulatedProvider().score(chk)).verdict is Verdict.CORRECT

    def test_prob_of_target_regimes(self):
        prov = SimulatedProvider()
        assert prov.prob_of_target(gen(k=0)) > 0.95
        assert prov.prob_of_target(gen(k=1024)) < 0.1

    def test_no_evidence_is_near_chance(self):
        # With every binding scrubbed all candidates are exchangeable up
        # to noise, so the renormalized target probability sits at 1/50.
        prov = SimulatedProvider()
        vals = [
            prov.prob_of_target(scrub(gen(k=16, filler=FillerKind.REPEAT, trial=t), ScrubOp.NO_EVIDENCE))
            for t in range(50)
        ]
        mean = sum(vals) / len(vals)
        assert mean == pytest.approx(0.02, abs=0.002)

    def test_verify_semantics(self):
        prov = SimulatedProvider()
        inst = gen(k=8)
        assert prov.verify(inst.query_key, inst.target, inst.tokens) == 0.95
        nulled = scrub(inst, ScrubOp.NO_EVIDENCE)
        assert prov.verify(inst.query_key, inst.target, nulled.tokens) == 0.02

    def test_params_carried(self):
        p = BiasParams(z0=4.0, alpha=0.9)
        assert SimulatedProvider(p).params.z0 == 4.0


class TestFileCacheProvider:
    def test_round_trip(self, tmp_path):
        insts = [gen(trial=t) for t in range(3)]
        prov = SimulatedProvider()
        records = score_all(prov, insts)
        path = tmp_path / "scores.jsonl"
        assert FileCacheProvider.dump(path, records) == 3
        replay = FileCacheProvider(path)
        assert len(replay) == 3
        for inst in insts:
            assert replay.score(inst).entries == records[inst.instance_id].entries

    def test_missing_record(self, tmp_path):
        path = tmp_path / "scores.jsonl"
        FileCacheProvider.dump(path, {})
        with pytest.raises(MissingRecordError) as ei:
            FileCacheProvider(path).score(gen())
        assert gen().instance_id in str(ei.value)

    def test_malformed_file(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"instance_id": "x"}\n')
        with pytest.raises(DataError):
            FileCacheProvider(path)

    def test_unreadable_path(self, tmp_path):
        with pytest.raises(DataError):
            FileCacheProvider(tmp_path / "absent.jsonl")


class TestDiskCache:
    def test_put_get_and_reload(self, tmp_path):
        path = tmp_path / "cache.jsonl"
        c = DiskCache(path)
        key = DiskCache.make_key("e", "m", "p")
        assert c.get(key) is None
        c.put(key, {"x": 1})
        assert c.get(key) == {"x": 1}
        again = DiskCache(path)
        assert again.get(key) == {"x": 1}

    def test_last_write_wins_on_reload(self, tmp_path):
        path = tmp_path / "cache.jsonl"
        c = DiskCache(path)
        key = DiskCache.make_key("e", "m", "p")
        c.put(key, {"v": 1})
        c.put(key, {"v": 2})
        assert DiskCache(path).get(key) == {"v": 2}

    def test_torn_final_line_tolerated(self, tmp_path):
        path = tmp_path / "cache.jsonl"
        c = DiskCache(path)
        c.put("k1", {"v": 1})
        with open(path, "a", encoding="utf-8") as fh:
            fh.write('{"key": "k2", "resp')  # simulated crash mid-write
        again = DiskCache(path)
        assert again.get("k1") == {"v": 1}
        assert again.get("k2") is None

    def test_threaded_puts_all_survive(self, tmp_path):
        path = tmp_path / "cache.jsonl"
        c = DiskCache(path)

        def worker(i):
            for j in range(20):
                c.put(f"k{i}-{j}", {"i": i, "j": j})

        threads = [threading.Thread(target=worker, args=(i,)) for i in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        again = DiskCache(path)
        assert len(again) == 160
        assert again.get("k7-19") == {"i": 7, "j": 19}


class FakeResponse:
    def __init__(self, status_code, payload=None, text=""):
        self.status_code = status_code
        self._payload = payload
        self.text = text

    def json(self):
        if self._payload is None:
            raise ValueError("no JSON")
        return self._payload


class FakeSession:
    """Scripted responses; records every request."""

    def __init__(self, responses):
        self.responses = list(responses)
        self.calls = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.calls.append({"url": url, "json": json, "headers": headers})
        if not self.responses:
            raise AssertionError("unexpected extra request")
        item = self.responses.pop(0)
        if isinstance(item, Exception):
            raise item
        return item


def payload_dict(entry):
    return {"choices": [{"logprobs": {"top_logprobs": [entry]}}]}


@pytest.fixture
def api_key(monkeypatch):
    monkeypatch.setenv("ROUTING_AUDIT_API_KEY", "sk-test-123")


class TestHttpProvider:
    def test_request_shape_and_auth(self, api_key):
        inst = gen(k=0)
        sess = FakeSession([FakeResponse(200, payload_dict({inst.target: -0.1, "the": -3.0}))])
        prov = HttpProvider("https://api.example/v1", "test-model", session=sess, backoff=0)
        rec = prov.score(inst)
        call = sess.calls[0]
        assert call["json"] == {
            "model": "test-model",
            "prompt": inst.rendered + " ",
            "max_tokens": 1,
            "logprobs": 20,
            "echo": False,
        }
        assert call["headers"]["Authorization"] == "Bearer sk-test-123"
        assert rec.entries[inst.target_id] == pytest.approx(-0.1)

    def test_list_shaped_top_logprobs(self, api_key):
        inst = gen(k=0)
        entry = [
            {"token": inst.target, "logprob": -0.2},
            {"token": "the", "logprob": -2.0},
        ]
        sess = FakeSession([FakeResponse(200, payload_dict(entry))])
        prov = HttpProvider("https://api.example/v1", "m", session=sess)
        rec = prov.score(inst)
        assert rec.entries[inst.target_id] == pytest.approx(-0.2)
        assert rec.entries[token_id("the")] == pytest.approx(-2.0)

    def test_unknown_tokens_get_synthetic_ids(self, api_key):
        inst = gen(k=0)
        entry = {inst.target: -0.1, "zzgibberish": -1.0, "qqblob": -2.0, inst.competitor: -3.0}
        sess = FakeSession([FakeResponse(200, payload_dict(entry))])
        rec = HttpProvider("https://api.example/v1", "m", session=sess).score(inst)
        synth = [t for t in rec.entries if t >= 10_000]
        assert len(synth) == 2
        out = classify(rec)
        assert out.gate_available

    def test_candidates_only_slice_has_no_gate(self, api_key):
        inst = gen(k=0)
        entry = {inst.target: -0.1, inst.competitor: -1.0}
        sess = FakeSession([FakeResponse(200, payload_dict(entry))])
        rec = HttpProvider("https://api.example/v1", "m", session=sess).score(inst)
        out = classify(rec, require_gate=False)
        assert not out.gate_available and out.candidate_correct

    def test_whitespace_variants_keep_best(self, api_key):
        inst = gen(k=0)
        entry = {inst.target: -2.0, " " + inst.target: -0.5, "the": -3.0}
        sess = FakeSession([FakeResponse(200, payload_dict(entry))])
        rec = HttpProvider("https://api.example/v1", "m", session=sess).score(inst)
        assert rec.entries[inst.target_id] == pytest.approx(-0.5)

    def test_retry_then_success(self, api_key):
        inst = gen(k=0)
        good = FakeResponse(200, payload_dict({inst.target: -0.1, "the": -3.0}))
        sess = FakeSession([FakeResponse(500), ConnectionError("boom"), good])
        prov = HttpProvider("https://api.example/v1", "m", session=sess, backoff=0)
        assert prov.score(inst).entries
        assert len(sess.calls) == 3

    def test_exhausted_retries_raise(self, api_key):
        sess = FakeSession([FakeResponse(500)] * 3)
        prov = HttpProvider("https://api.example/v1", "m", session=sess, backoff=0, max_retries=2)
        with pytest.raises(ProviderError, match="after 3 attempts"):
            prov.score(gen(k=0))

    def test_client_error_fails_fast(self, api_key):
        sess = FakeSession([FakeResponse(400, text="bad request")])
        prov = HttpProvider("https://api.example/v1", "m", session=sess, backoff=0)
        with pytest.raises(ProviderError, match="HTTP 400"):
            prov.score(gen(k=0))
        assert len(sess.calls) == 1

    def test_missing_key_raises_before_any_request(self, monkeypatch):
        monkeypatch.delenv("ROUTING_AUDIT_API_KEY", raising=False)
        sess = FakeSession([])
        prov = HttpProvider("https://api.example/v1", "m", session=sess)
        with pytest.raises(ProviderError, match="ROUTING_AUDIT_API_KEY"):
            prov.score(gen(k=0))
        assert sess.calls == []

    def test_cache_hit_skips_request_and_holds_no_secret(self, api_key, tmp_path):
        inst = gen(k=0)
        cache = DiskCache(tmp_path / "c.jsonl")
        good = FakeResponse(200, payload_dict({inst.target: -0.1, "the": -3.0}))
        sess = FakeSession([good])
        prov = HttpProvider("https://api.example/v1", "m", session=sess, cache=cache)
        prov.score(inst)
        prov.score(inst)  # second call must be served from cache
        assert len(sess.calls) == 1
        raw = (tmp_path / "c.jsonl").read_text()
        assert "sk-test-123" not in raw

    def test_malformed_payload(self, api_key):
        sess = FakeSession([FakeResponse(200, {"choices": []})])
        prov = HttpProvider("https://api.example/v1", "m", session=sess, backoff=0, max_retries=0)
        with pytest.raises(ProviderError):
            prov.score(gen(k=0))

    def test_score_many_preserves_order(self, api_key):
        insts = [gen(k=0, trial=t) for t in range(4)]
        responses = [
            FakeResponse(200, payload_dict({i.target: -0.1, "the": -3.0})) for i in insts
        ]
        sess = FakeSession(responses)
        prov = HttpProvider("https://api.example/v1", "m", session=sess, max_parallel=1)
        recs = prov.score_many(insts)
        assert [r.target_id for r in recs] == [i.target_id for i in insts]

    def test_verify_renormalizes_labels(self, api_key):
        entry = {"ENTAILED": -0.5, "CONTRADICTED": -2.0, "NEUTRAL": -3.0, "UNKNOWN": -3.0}
        sess = FakeSession([FakeResponse(200, payload_dict(entry))])
        prov = HttpProvider("https://api.example/v1", "m", session=sess)
        p = prov.verify("KEY1", "apple", ("KEY1", "=", "[", "apple", "]"))
        z = [math.exp(v) for v in entry.values()]
        assert p == pytest.approx(math.exp(-0.5) / sum(z), abs=1e-9)

    def test_verify_without_entailed_token(self, api_key):
        entry = {"CONTRADICTED": -0.5, "NEUTRAL": -2.0}
        sess = FakeSession([FakeResponse(200, payload_dict(entry))])
        prov = HttpProvider("https://api.example/v1", "m", session=sess)
        assert prov.verify("KEY1", "apple", ("x",)) == 0.0

    def test_bad_parallelism_rejected(self):
        with pytest.raises(ProviderError):
            HttpProvider("https://e", "m", max_parallel=0, session=FakeSession([]))

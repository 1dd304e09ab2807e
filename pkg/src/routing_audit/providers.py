"""Logprob providers: a deterministic simulated model, a file-backed
replay cache, and an HTTP client.

The simulated provider implements a recency-biased binding model over
generated task instances: the target's logit decays geometrically in
the distance from its last surviving evidence to the readout, every
other candidate scores in proportion to its raw occurrence count, and
non-candidate hedge tokens sit at a fixed offset. Small seeded noise
breaks ties. Scores are deterministic per (provider seed, instance id),
so sweeps are exactly reproducible.

The HTTP provider posts single-token completion requests and reads the
top-N logprobs of the next token. Credentials come only from a named
environment variable at request time; they are never written to the
cache, the manifest, or any log.
"""

from __future__ import annotations

import json
import math
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Mapping, Protocol, Sequence

from . import words
from .errors import DataError, MissingRecordError, ProviderError
from .stages import LogprobRecord
from .tasks import TaskInstance, derive_seed

__all__ = [
    "BiasParams",
    "Provider",
    "SimulatedProvider",
    "FileCacheProvider",
    "DiskCache",
    "HttpProvider",
    "DEFAULT_API_KEY_ENV",
    "VERIFY_LABELS",
]

import random

DEFAULT_API_KEY_ENV = "ROUTING_AUDIT_API_KEY"

VERIFY_LABELS = ("ENTAILED", "CONTRADICTED", "NEUTRAL", "UNKNOWN")


class Provider(Protocol):
    """Anything that can score a task instance at its readout position."""

    name: str

    def score(self, instance: TaskInstance) -> LogprobRecord: ...


@dataclass(frozen=True, slots=True)
class BiasParams:
    """Parameters of the simulated binding model.

    z0: logit of a binding read at zero distance.
    alpha: per-token retention of the target logit.
    beta: logit per raw occurrence of a non-target candidate.
    gamma: logit of non-candidate hedge tokens.
    noise_scale: stddev of the seeded Gaussian jitter per entry.
    """

    z0: float = 8.0
    alpha: float = 0.995
    beta: float = 0.25
    gamma: float = 1.0
    noise_scale: float = 0.05


class SimulatedProvider:
    """Deterministic scores from the recency-biased binding model."""

    def __init__(self, params: BiasParams | None = None, seed: int = 0):
        self.params = params or BiasParams()
        self.seed = seed
        self.name = "simulated"

    def _logits(self, instance: TaskInstance) -> dict[int, float]:
        p = self.params
        rng = random.Random(derive_seed("score", self.seed, instance.instance_id))
        counts: dict[str, int] = {}
        for tok in instance.tokens:
            counts[tok] = counts.get(tok, 0) + 1

        evidence = instance.target_evidence()
        readout = len(instance.tokens)
        z: dict[int, float] = {}
        for word, tid in zip(instance.candidates, instance.candidate_ids):
            if word == instance.target:
                if evidence:
                    k_eff = readout - max(s.end for s in evidence)
                    base = p.z0 * p.alpha**k_eff
                else:
                    base = 0.0
            else:
                base = p.beta * counts.get(word, 0)
            z[tid] = base
        for hedge in words.HEDGE_TOKENS:
            z[words.token_id(hedge)] = p.gamma
        # One jitter draw per entry, in sorted-id order so the stream
        # never depends on dict iteration.
        for tid in sorted(z):
            z[tid] += rng.gauss(0.0, p.noise_scale)
        return z

    def score(self, instance: TaskInstance) -> LogprobRecord:
        z = self._logits(instance)
        zmax = max(z.values())
        log_norm = zmax + math.log(sum(math.exp(v - zmax) for v in z.values()))
        entries = {tid: v - log_norm for tid, v in z.items()}
        return LogprobRecord(
            entries=entries,
            candidate_ids=instance.candidate_ids,
            target_id=instance.target_id,
        )

    def prob_of_target(self, instance: TaskInstance) -> float:
        """Softmax probability of the target among candidates only."""
        z = self._logits(instance)
        cand = [z[tid] for tid in instance.candidate_ids]
        zmax = max(cand)
        total = sum(math.exp(v - zmax) for v in cand)
        return math.exp(z[instance.target_id] - zmax) / total

    def verify(self, key: str, claim: str, context: Sequence[str]) -> float:
        """Probability that the context entails ``key = [ claim ]``.

        Deterministic: 0.95 when the bound statement survives in the
        context, 0.02 otherwise.
        """
        pattern = (key, "=", "[", claim)
        n = len(pattern)
        for i in range(len(context) - n + 1):
            if tuple(context[i : i + n]) == pattern:
                return 0.95
        return 0.02


class FileCacheProvider:
    """Replay scores recorded earlier, keyed by instance id."""

    def __init__(self, path):
        self.path = str(path)
        self.name = f"file:{self.path}"
        self._records: dict[str, LogprobRecord] = {}
        try:
            with open(self.path, "r", encoding="utf-8") as fh:
                for line_no, line in enumerate(fh, 1):
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        d = json.loads(line)
                        self._records[d["instance_id"]] = LogprobRecord(
                            entries={int(k): float(v) for k, v in d["entries"].items()},
                            candidate_ids=tuple(d["candidate_ids"]),
                            target_id=int(d["target_id"]),
                        )
                    except (KeyError, TypeError, ValueError) as exc:
                        raise DataError(f"{self.path}:{line_no}: malformed record: {exc}") from exc
        except OSError as exc:
            raise DataError(f"cannot read score cache {self.path}: {exc}") from exc

    def __len__(self) -> int:
        return len(self._records)

    def score(self, instance: TaskInstance) -> LogprobRecord:
        try:
            return self._records[instance.instance_id]
        except KeyError:
            raise MissingRecordError(instance.instance_id) from None

    @staticmethod
    def dump(path, records: Mapping[str, LogprobRecord]) -> int:
        """Write records as JSONL, sorted by instance id. Returns count."""
        with open(path, "w", encoding="utf-8") as fh:
            for iid in sorted(records):
                rec = records[iid]
                fh.write(
                    json.dumps(
                        {
                            "instance_id": iid,
                            "entries": {str(k): v for k, v in sorted(rec.entries.items())},
                            "candidate_ids": list(rec.candidate_ids),
                            "target_id": rec.target_id,
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
        return len(records)


class DiskCache:
    """Append-only JSONL response cache, safe under threaded writers.

    Keys are content hashes of (endpoint, model, prompt); the API key
    never enters the key or the stored value. Writes happen under a
    lock and are flushed per entry, so a crash loses at most the entry
    being written; on load the last line for a key wins.
    """

    def __init__(self, path):
        self.path = str(path)
        self._lock = threading.Lock()
        self._mem: dict[str, dict] = {}
        if os.path.exists(self.path):
            with open(self.path, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        d = json.loads(line)
                        self._mem[d["key"]] = d["response"]
                    except (KeyError, json.JSONDecodeError):
                        continue  # tolerate a torn final line

    @staticmethod
    def make_key(endpoint: str, model: str, prompt: str) -> str:
        import hashlib

        blob = "\x1f".join((endpoint, model, prompt)).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    def get(self, key: str) -> dict | None:
        with self._lock:
            return self._mem.get(key)

    def put(self, key: str, response: dict) -> None:
        line = json.dumps({"key": key, "response": response}, sort_keys=True)
        with self._lock:
            self._mem[key] = response
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")
                fh.flush()

    def __len__(self) -> int:
        with self._lock:
            return len(self._mem)


class HttpProvider:
    """Single-token completion scores over an HTTP logprobs API.

    The request asks for one completion token with top-N logprobs and
    no echo. Both response shapes for the top-logprobs field are
    accepted: a token-to-logprob mapping, or a list of {token, logprob}
    objects. Unknown returned tokens get synthetic ids above the
    bundled vocabulary so they still participate in the gate statistic.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        *,
        top_n: int = 20,
        api_key_env: str = DEFAULT_API_KEY_ENV,
        max_parallel: int = 4,
        max_retries: int = 3,
        backoff: float = 0.5,
        timeout: float = 30.0,
        cache: DiskCache | None = None,
        session=None,
    ):
        if max_parallel < 1:
            raise ProviderError(f"max_parallel must be >= 1, got {max_parallel}")
        self.endpoint = endpoint
        self.model = model
        self.top_n = top_n
        self.api_key_env = api_key_env
        self.max_parallel = max_parallel
        self.max_retries = max_retries
        self.backoff = backoff
        self.timeout = timeout
        self.cache = cache
        self.name = f"http:{model}"
        if session is None:
            import requests

            session = requests.Session()
        self._session = session

    def _headers(self) -> dict[str, str]:
        key = os.environ.get(self.api_key_env)
        if not key:
            raise ProviderError(
                f"no API key: set the {self.api_key_env} environment variable"
            )
        return {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}

    def _post(self, prompt: str) -> dict:
        cache_key = DiskCache.make_key(self.endpoint, self.model, prompt)
        if self.cache is not None:
            hit = self.cache.get(cache_key)
            if hit is not None:
                return hit
        body = {
            "model": self.model,
            "prompt": prompt,
            "max_tokens": 1,
            "logprobs": self.top_n,
            "echo": False,
        }
        last_err: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                resp = self._session.post(
                    self.endpoint, json=body, headers=self._headers(), timeout=self.timeout
                )
                status = getattr(resp, "status_code", 0)
                if status == 200:
                    payload = resp.json()
                    if self.cache is not None:
                        self.cache.put(cache_key, payload)
                    return payload
                if status in (429,) or 500 <= status < 600:
                    last_err = ProviderError(f"HTTP {status} from {self.endpoint}")
                else:
                    raise ProviderError(f"HTTP {status} from {self.endpoint}: {resp.text[:200]}")
            except ProviderError:
                raise
            except Exception as exc:  # connection errors, timeouts, bad JSON
                last_err = exc
            if attempt < self.max_retries:
                time.sleep(self.backoff * (2**attempt))
        raise ProviderError(f"request failed after {self.max_retries + 1} attempts: {last_err}")

    @staticmethod
    def _top_logprobs(payload: dict) -> dict[str, float]:
        try:
            entry = payload["choices"][0]["logprobs"]["top_logprobs"][0]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"malformed logprobs payload: {exc}") from exc
        if isinstance(entry, Mapping):
            return {str(t): float(lp) for t, lp in entry.items()}
        if isinstance(entry, list):
            try:
                return {str(d["token"]): float(d["logprob"]) for d in entry}
            except (KeyError, TypeError) as exc:
                raise ProviderError(f"malformed top_logprobs list: {exc}") from exc
        raise ProviderError(f"unrecognized top_logprobs shape: {type(entry).__name__}")

    def score(self, instance: TaskInstance) -> LogprobRecord:
        payload = self._post(instance.rendered + " ")
        raw = self._top_logprobs(payload)
        entries: dict[int, float] = {}
        unknown: list[tuple[str, float]] = []
        for tok, lp in raw.items():
            stripped = tok.strip()
            try:
                tid = words.token_id(stripped)
            except DataError:
                unknown.append((stripped, lp))
                continue
            # Keep the better score if the API returns both " tok" and "tok".
            if tid not in entries or lp > entries[tid]:
                entries[tid] = lp
        for i, (_, lp) in enumerate(sorted(unknown)):
            entries[10_000 + i] = lp
        return LogprobRecord(
            entries=entries,
            candidate_ids=instance.candidate_ids,
            target_id=instance.target_id,
        )

    def score_many(self, instances: Sequence[TaskInstance]) -> list[LogprobRecord]:
        """Score a batch with bounded parallelism, preserving order."""
        if not instances:
            return []
        with ThreadPoolExecutor(max_workers=self.max_parallel) as pool:
            return list(pool.map(self.score, instances))

    def verify(self, key: str, claim: str, context: Sequence[str]) -> float:
        """Entailment probability of ``key = [ claim ]`` given context,
        from the renormalized first-token scores of the four labels."""
        prompt = (
            "CONTEXT : " + " ".join(context) + " CLAIM : " + f"{key} = [ {claim} ] "
            "Does the context entail the claim? Answer ENTAILED , CONTRADICTED , "
            "NEUTRAL , or UNKNOWN : "
        )
        raw = self._top_logprobs(self._post(prompt))
        by_label: dict[str, float] = {}
        for tok, lp in raw.items():
            t = tok.strip().upper()
            for label in VERIFY_LABELS:
                if label.startswith(t) and t:
                    if label not in by_label or lp > by_label[label]:
                        by_label[label] = lp
        if "ENTAILED" not in by_label:
            return 0.0
        zmax = max(by_label.values())
        total = sum(math.exp(v - zmax) for v in by_label.values())
        return math.exp(by_label["ENTAILED"] - zmax) / total


def score_all(provider, instances: Iterable[TaskInstance]) -> dict[str, LogprobRecord]:
    """Score every instance, returning a dict keyed by instance id."""
    out: dict[str, LogprobRecord] = {}
    seq = list(instances)
    if hasattr(provider, "score_many"):
        for inst, rec in zip(seq, provider.score_many(seq)):
            out[inst.instance_id] = rec
    else:
        for inst in seq:
            out[inst.instance_id] = provider.score(inst)
    return out

"""Single choke point for all model interaction.

Three capabilities — candidate sampling, token-level log-probability
scoring, and text embedding — each backed either by an OpenAI-compatible
HTTP endpoint or by a deterministic offline stub selected with a
``stub:<profile>`` endpoint string. A content-addressed response cache
makes recorded sessions replayable byte-for-byte.

Stub profiles (part of the public test surface):

  sampler   ``stub:echo``             k distinct completions derived from
                                      the prompt hash and sample index.
            ``stub:fixture:<path>``   completions read from a JSON routes
                                      file: ``{"routes": [{"contains": s,
                                      "completions": [...]}, ...]}``; the
                                      first route whose ``contains`` string
                                      occurs in the prompt serves its
                                      completions (cycled when k exceeds
                                      the list).
  scorer    ``stub:uniform``          every token costs ln 2 nats.
            ``stub:uniform:<nats>``   every token costs <nats>.
            ``stub:vocab-aware``      tokens on the committed
                                      common-identifier list cost ln 2,
                                      all others 5 ln 2.
  embedder  ``stub:ngram``            unit vector from feature-hashed word
                                      unigrams; texts sharing vocabulary
                                      embed nearby.

All logs are natural (nats).
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
import threading
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import requests

from . import tokens as tokens_mod
from .errors import (
    BudgetExceeded,
    CacheCorrupted,
    ContextOverflow,
    EndpointUnavailable,
)
from .model import Provenance, canonical_json

LN2 = math.log(2.0)
UNCOMMON_FACTOR = 5.0  # vocab-aware stub: surprisal multiplier for off-list tokens


@dataclass(frozen=True)
class GatewayConfig:
    sampler_endpoint: str = "stub:echo"
    scorer_endpoint: str = "stub:uniform"
    embedder_endpoint: str = "stub:ngram"
    sampler_model: str = "stub-sampler"
    scorer_model: str = "stub-scorer"
    embedder_model: str = "stub-embedder"
    temperature: float = 0.8
    max_tokens: int = 4096
    timeout: float = 60.0
    cache_dir: str | None = None
    tokenizer: str = tokens_mod.REF_MODEL
    context_budget: int = 32768
    embed_dim: int = 64
    api_key_env: str = "LIBFORGE_API_KEY"
    max_inflight: int = 4
    retries: int = 2
    max_calls: int | None = None
    rate_limit_per_s: float | None = None

    def to_dict(self) -> dict:
        return {
            "sampler_endpoint": self.sampler_endpoint,
            "scorer_endpoint": self.scorer_endpoint,
            "embedder_endpoint": self.embedder_endpoint,
            "sampler_model": self.sampler_model,
            "scorer_model": self.scorer_model,
            "embedder_model": self.embedder_model,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "timeout": self.timeout,
            "cache_dir": self.cache_dir,
            "tokenizer": self.tokenizer,
            "context_budget": self.context_budget,
            "embed_dim": self.embed_dim,
            "api_key_env": self.api_key_env,
            "max_inflight": self.max_inflight,
            "retries": self.retries,
            "max_calls": self.max_calls,
            "rate_limit_per_s": self.rate_limit_per_s,
        }


@dataclass(frozen=True)
class ScoredText:
    """Token-level surprisal record; the suffix sum feeds description length."""

    token_ids: tuple[int, ...]
    token_logprobs: tuple[float, ...]
    prompt_boundary: int  # index of the first suffix token

    def __post_init__(self):
        if len(self.token_ids) != len(self.token_logprobs):
            raise ValueError("token_ids and token_logprobs must align")

    @property
    def suffix_logprob(self) -> float:
        return sum(self.token_logprobs[self.prompt_boundary :])


@dataclass(frozen=True)
class SampledCompletion:
    text: str
    provenance: Provenance


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _token_id(token: str) -> int:
    return int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=4).digest(), "big")


class ResponseCache:
    """Write-once, content-addressed file cache with embedded payload hash."""

    def __init__(self, cache_dir: str | Path):
        self.root = Path(cache_dir)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    @staticmethod
    def key_for(endpoint: str, model: str, body: dict) -> str:
        return _sha(canonical_json({"endpoint": endpoint, "model": model, "body": body}))

    def get(self, key: str):
        path = self._path(key)
        if not path.is_file():
            return None
        record = json.loads(path.read_text(encoding="utf-8"))
        payload = record.get("payload")
        if _sha(canonical_json(payload)) != record.get("payload_sha256"):
            raise CacheCorrupted(str(path))
        return payload

    def put(self, key: str, payload) -> None:
        path = self._path(key)
        if path.exists():  # write-once
            return
        path.parent.mkdir(parents=True, exist_ok=True)
        record = {
            "key": key,
            "payload": payload,
            "payload_sha256": _sha(canonical_json(payload)),
        }
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(canonical_json(record))
            os.replace(tmp, path)
        finally:
            if os.path.exists(tmp):
                os.unlink(tmp)


def _load_common_identifiers() -> frozenset[str]:
    raw = resources.files("libforge.data").joinpath("common_identifiers.json").read_text("utf-8")
    return frozenset(json.loads(raw)["tokens"])


_COMMON_IDENTIFIERS = _load_common_identifiers()
_WORD_VECTOR_CACHE: dict[tuple[str, int], np.ndarray] = {}


def _word_vector(word: str, dim: int) -> np.ndarray:
    key = (word, dim)
    vec = _WORD_VECTOR_CACHE.get(key)
    if vec is None:
        seed = int.from_bytes(hashlib.blake2b(word.encode("utf-8"), digest_size=8).digest(), "big")
        vec = np.random.default_rng(seed).standard_normal(dim)
        _WORD_VECTOR_CACHE[key] = vec
    return vec


class LMGateway:
    """Sampling, scoring, and embedding behind one configured instance.

    Shareable across workers: an in-flight semaphore bounds concurrent
    requests and the file cache uses atomic renames.
    """

    def __init__(self, cfg: GatewayConfig):
        self.cfg = cfg
        self.cache = ResponseCache(cfg.cache_dir) if cfg.cache_dir else None
        self._inflight = threading.Semaphore(max(1, cfg.max_inflight))
        self._calls = 0
        self._calls_lock = threading.Lock()
        self._rate_lock = threading.Lock()
        self._last_request = 0.0

    def _rate_limit(self) -> None:
        if not self.cfg.rate_limit_per_s:
            return
        interval = 1.0 / self.cfg.rate_limit_per_s
        with self._rate_lock:
            wait = self._last_request + interval - time.monotonic()
            if wait > 0:
                time.sleep(wait)
            self._last_request = time.monotonic()

    # ---- budget ----------------------------------------------------

    def _charge(self) -> None:
        if self.cfg.max_calls is None:
            return
        with self._calls_lock:
            if self._calls >= self.cfg.max_calls:
                raise BudgetExceeded(f"request budget {self.cfg.max_calls} exhausted")
            self._calls += 1

    # ---- sampling --------------------------------------------------

    def sample(self, prompt: str, k: int) -> list[SampledCompletion]:
        if k < 1:
            raise ValueError("k must be >= 1")
        endpoint = self.cfg.sampler_endpoint
        prompt_hash = _sha(prompt)
        if endpoint.startswith("stub:"):
            texts = self._stub_sample(endpoint[5:], prompt, k)
        else:
            body = {
                "model": self.cfg.sampler_model,
                "prompt": prompt,
                "max_tokens": self.cfg.max_tokens,
                "temperature": self.cfg.temperature,
                "n": k,
            }
            payload = self._request(endpoint, "/completions", body)
            texts = [choice["text"] for choice in payload["choices"]]
            if len(texts) < k:
                raise EndpointUnavailable(f"endpoint returned {len(texts)} of {k} completions")
        return [
            SampledCompletion(
                text=text,
                provenance=Provenance(
                    model=self.cfg.sampler_model,
                    temperature=self.cfg.temperature,
                    sample_index=i,
                    prompt_sha256=prompt_hash,
                ),
            )
            for i, text in enumerate(texts)
        ]

    def _stub_sample(self, profile: str, prompt: str, k: int) -> list[str]:
        if profile == "echo":
            h = _sha(prompt)
            return [f"# completion {i} for prompt {h[:16]}\n" for i in range(k)]
        if profile.startswith("fixture:"):
            routes_path = Path(profile[len("fixture:") :])
            try:
                routes = json.loads(routes_path.read_text(encoding="utf-8"))["routes"]
            except (OSError, json.JSONDecodeError, KeyError) as exc:
                raise EndpointUnavailable(f"unusable fixture routes {routes_path}: {exc}") from exc
            for route in routes:
                needle = route.get("contains", "")
                if needle in prompt:
                    pool = route["completions"]
                    return [pool[i % len(pool)] for i in range(k)]
            raise EndpointUnavailable(f"no fixture route matches prompt (routes: {routes_path})")
        raise EndpointUnavailable(f"unknown sampler stub profile: {profile!r}")

    # ---- scoring ---------------------------------------------------

    def score_suffix(self, prefix: str, suffix: str) -> ScoredText:
        endpoint = self.cfg.scorer_endpoint
        if endpoint.startswith("stub:"):
            return self._stub_score(endpoint[5:], prefix, suffix)
        body = {
            "model": self.cfg.scorer_model,
            "prompt": prefix + suffix,
            "max_tokens": 0,
            "echo": True,
            "logprobs": 0,
        }
        payload = self._request(endpoint, "/completions", body)
        lp = payload["choices"][0]["logprobs"]
        offsets = lp["text_offset"]
        boundary = sum(1 for off in offsets if off < len(prefix))
        logprobs = [x if x is not None else 0.0 for x in lp["token_logprobs"]]
        ids = [_token_id(t) for t in lp["tokens"]]
        return ScoredText(
            token_ids=tuple(ids),
            token_logprobs=tuple(logprobs),
            prompt_boundary=boundary,
        )

    def _stub_score(self, profile: str, prefix: str, suffix: str) -> ScoredText:
        tok = tokens_mod.get_tokenizer(self.cfg.tokenizer)
        prefix_toks = tok.tokenize(prefix)
        suffix_toks = tok.tokenize(suffix)
        if len(prefix_toks) + len(suffix_toks) > self.cfg.context_budget:
            raise ContextOverflow(
                f"{len(prefix_toks) + len(suffix_toks)} tokens exceed "
                f"context budget {self.cfg.context_budget}"
            )
        if profile == "uniform" or profile.startswith("uniform:"):
            nats = LN2 if profile == "uniform" else float(profile.split(":", 1)[1])
            per_token = lambda t: -nats  # noqa: E731
        elif profile == "vocab-aware":
            per_token = lambda t: -LN2 if t in _COMMON_IDENTIFIERS else -UNCOMMON_FACTOR * LN2  # noqa: E731
        else:
            raise EndpointUnavailable(f"unknown scorer stub profile: {profile!r}")
        all_toks = prefix_toks + suffix_toks
        return ScoredText(
            token_ids=tuple(_token_id(t) for t in all_toks),
            token_logprobs=tuple(per_token(t) for t in all_toks),
            prompt_boundary=len(prefix_toks),
        )

    # ---- embedding -------------------------------------------------

    def embed(self, texts: list[str]) -> list[np.ndarray]:
        if not texts:
            raise ValueError("texts must be non-empty")
        endpoint = self.cfg.embedder_endpoint
        if endpoint.startswith("stub:"):
            return [self._stub_embed(endpoint[5:], t) for t in texts]
        body = {"model": self.cfg.embedder_model, "input": list(texts)}
        payload = self._request(endpoint, "/embeddings", body)
        out = []
        for item in payload["data"]:
            vec = np.asarray(item["embedding"], dtype=float)
            norm = np.linalg.norm(vec)
            out.append(vec / norm if norm > 0 else vec)
        return out

    def _stub_embed(self, profile: str, text: str) -> np.ndarray:
        if profile != "ngram":
            raise EndpointUnavailable(f"unknown embedder stub profile: {profile!r}")
        dim = self.cfg.embed_dim
        words = tokens_mod.get_tokenizer(tokens_mod.FALLBACK).tokenize(text)
        if not words:
            words = ["<empty>"]
        vec = np.zeros(dim)
        for word in words:
            vec += _word_vector(word, dim)
        norm = np.linalg.norm(vec)
        if norm == 0:
            vec = _word_vector("<zero>", dim)
            norm = np.linalg.norm(vec)
        return vec / norm

    # ---- HTTP ------------------------------------------------------

    def _request(self, endpoint: str, route: str, body: dict) -> dict:
        model = body.get("model", "")
        key = ResponseCache.key_for(endpoint + route, model, body)
        if self.cache is not None:
            cached = self.cache.get(key)
            if cached is not None:
                return cached
        self._charge()
        url = endpoint.rstrip("/") + route
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.cfg.api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        last_error: Exception | None = None
        for attempt in range(self.cfg.retries + 1):
            self._rate_limit()
            with self._inflight:
                try:
                    resp = requests.post(
                        url, json=body, headers=headers, timeout=self.cfg.timeout
                    )
                except requests.RequestException as exc:
                    last_error = exc
                    time.sleep(min(0.2 * (attempt + 1), 1.0))
                    continue
            if resp.status_code == 200:
                try:
                    payload = resp.json()
                except ValueError as exc:
                    raise EndpointUnavailable(f"non-JSON response from {url}: {exc}") from exc
                if self.cache is not None:
                    self.cache.put(key, payload)
                return payload
            if resp.status_code == 400 and "context" in resp.text.lower():
                raise ContextOverflow(resp.text[:500])
            if resp.status_code in (500, 502, 503, 504, 429):
                last_error = EndpointUnavailable(f"HTTP {resp.status_code}: {resp.text[:200]}")
                time.sleep(min(0.2 * (attempt + 1), 1.0))
                continue
            raise EndpointUnavailable(f"HTTP {resp.status_code}: {resp.text[:200]}")
        raise EndpointUnavailable(f"{url}: {last_error}")

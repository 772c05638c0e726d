"""Pair judging through a pluggable backend, with an append-only verdict cache."""

from __future__ import annotations

import base64
import hashlib
import io
import json
import logging
import os
import random
import threading
import time
from dataclasses import asdict, dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Mapping, Protocol

import httpx
from PIL import Image

from .errors import (
    CacheCorrupt,
    ConfigError,
    EncodingError,
    ImageTooLarge,
    JudgeFailure,
    MissingCredential,
    MissingLatentScore,
    RateLimited,
    TransportError,
    VerdictError,
)
from .principles import PRINCIPLES, Principle
from .prompt import (
    CORRECTIVE_SUFFIX,
    PromptTemplate,
    RenderedPrompt,
    Side,
    Verdict,
    VerdictSet,
    format_verdicts,
    parse_verdicts,
    render_prompt,
)
from .schedule import PairTask

log = logging.getLogger(__name__)
wire_log = logging.getLogger("perceptbench.wire")


@dataclass(frozen=True)
class JudgeConfig:
    backend: str = "simulated"  # "live" or "simulated"
    model_id: str = "claude-3-sonnet-20240229"
    temperature: float = 0.01
    max_image_dimension: int = 8000
    max_retries: int = 2
    request_timeout: float = 120.0
    concurrency_limit: int = 4
    endpoint_url: str | None = None
    credential_env_var_name: str = "JUDGE_API_KEY"
    max_tokens: int = 1024
    backoff_base: float = 1.0
    # simulated backend only
    noise_p: float = 0.0
    seed: int = 0
    debug_wire: bool = False

    def __post_init__(self):
        if self.backend not in ("live", "simulated"):
            raise ConfigError(f"judge backend must be 'live' or 'simulated', got {self.backend!r}")
        if self.temperature < 0:
            raise ConfigError("temperature must be >= 0")
        if self.concurrency_limit < 1:
            raise ConfigError("concurrency limit must be >= 1")
        if self.max_image_dimension <= 0:
            raise ConfigError("max image dimension must be positive")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")
        if not 0 <= self.noise_p <= 0.5:
            raise ConfigError("noise_p must lie in [0, 0.5]")

    @property
    def effective_model_id(self) -> str:
        if self.backend == "simulated":
            return f"simulated(noise_p={self.noise_p},seed={self.seed})"
        return self.model_id

    def semantic_dict(self) -> dict[str, Any]:
        doc = asdict(self)
        doc.pop("debug_wire")
        return doc


# --- wire format -------------------------------------------------------------

_MEDIA_TYPES = {"PNG": "image/png", "JPEG": "image/jpeg", "GIF": "image/gif", "WEBP": "image/webp"}


def _media_type(payload: bytes) -> str:
    try:
        with Image.open(io.BytesIO(payload)) as img:
            return _MEDIA_TYPES.get(img.format or "", "application/octet-stream")
    except OSError:
        return "application/octet-stream"


def encode_request(
    prompt_text: str,
    images: tuple[bytes, bytes],
    model_id: str,
    temperature: float,
    max_tokens: int = 1024,
) -> dict[str, Any]:
    """Chat-style request: one user turn holding the text then IMAGE_1, IMAGE_2."""
    if len(images) != 2:
        raise EncodingError(f"expected exactly two images, got {len(images)}")
    parts: list[dict[str, Any]] = [{"type": "text", "text": prompt_text}]
    for slot, payload in enumerate(images, start=1):
        if not isinstance(payload, (bytes, bytearray)) or not payload:
            raise EncodingError(f"image payload for IMAGE_{slot} is empty")
        b64 = base64.b64encode(bytes(payload)).decode("ascii")
        parts.append(
            {"type": "image_url", "image_url": {"url": f"data:{_media_type(payload)};base64,{b64}"}}
        )
    return {
        "model": model_id,
        "temperature": temperature,
        "max_tokens": max_tokens,
        "messages": [{"role": "user", "content": parts}],
    }


def decode_image_parts(request: Mapping[str, Any]) -> list[bytes]:
    """Inverse of the image half of :func:`encode_request`."""
    out = []
    for part in request["messages"][0]["content"]:
        if part.get("type") == "image_url":
            url = part["image_url"]["url"]
            out.append(base64.b64decode(url.split(",", 1)[1]))
    return out


def _redacted(request: Mapping[str, Any]) -> dict[str, Any]:
    doc = json.loads(json.dumps(request))
    for part in doc["messages"][0]["content"]:
        if part.get("type") == "image_url":
            url = part["image_url"]["url"]
            head, _, data = url.partition(",")
            part["image_url"]["url"] = f"{head},<redacted {len(data)} chars>"
    return doc


def extract_response_text(doc: Any) -> str:
    """Pull the assistant text out of an OpenAI- or Anthropic-style response body."""
    try:
        if "choices" in doc:
            content = doc["choices"][0]["message"]["content"]
        else:
            content = doc["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise TransportError(f"unexpected response body shape: {exc}") from exc
    if isinstance(content, str):
        return content
    if isinstance(content, list):
        return "".join(p.get("text", "") for p in content if isinstance(p, dict))
    raise TransportError("response content is neither text nor a list of parts")


# --- backends ------------------------------------------------------------------


class Backend(Protocol):
    def complete(self, prompt: RenderedPrompt, text: str, images: tuple[bytes, bytes]) -> str: ...


def simulated_judge(
    latent: Mapping[str, Mapping[Principle | str, float]],
    noise_p: float,
    seed: int,
    pair: PairTask,
) -> VerdictSet:
    """Noisy-argmax oracle over latent per-principle scores.

    The higher latent score wins (exact ties go to the first image) and each
    principle's outcome is then flipped independently with probability
    ``noise_p``. Randomness is keyed on (seed, ordered pair, principle) so
    results do not depend on call order or thread scheduling.
    """
    if not 0 <= noise_p <= 0.5:
        raise ValueError("noise_p must lie in [0, 0.5]")
    verdicts = {}
    for p in PRINCIPLES:
        a = _latent(latent, pair.first, p)
        b = _latent(latent, pair.second, p)
        first_wins = a >= b
        rng = random.Random(f"{seed}|{pair.first}|{pair.second}|{p.value}")
        flipped = rng.random() < noise_p
        if flipped:
            first_wins = not first_wins
        side = Side.FIRST if first_wins else Side.SECOND
        note = f"latent {a:.4f} vs {b:.4f}" + (" (flipped by noise)" if flipped else "")
        verdicts[p] = Verdict(side, note)
    return VerdictSet(first=pair.first, second=pair.second, verdicts=verdicts)


def _latent(latent: Mapping[str, Mapping[Principle | str, float]], item: str, p: Principle) -> float:
    scores = latent.get(item)
    if scores is None:
        raise MissingLatentScore(f"no latent scores for item {item!r}")
    for key in (p, p.value):
        if key in scores:
            return float(scores[key])
    raise MissingLatentScore(f"no latent {p.value} score for item {item!r}")


class SimulatedBackend:
    """Answers in the response grammar, driven by :func:`simulated_judge`."""

    def __init__(self, latent: Mapping[str, Mapping[Principle | str, float]], noise_p: float = 0.0, seed: int = 0):
        self.latent = latent
        self.noise_p = noise_p
        self.seed = seed

    def complete(self, prompt: RenderedPrompt, text: str, images: tuple[bytes, bytes]) -> str:
        return format_verdicts(simulated_judge(self.latent, self.noise_p, self.seed, prompt.pair))


class HttpBackend:
    """POSTs chat-style requests to a configurable multimodal endpoint."""

    def __init__(self, config: JudgeConfig, client: httpx.Client | None = None, sleep=time.sleep):
        if not config.endpoint_url:
            raise ConfigError("live judge needs an endpoint URL")
        key = os.environ.get(config.credential_env_var_name)
        if not key:
            raise MissingCredential(
                f"environment variable {config.credential_env_var_name} is not set"
            )
        self.config = config
        self._headers = {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}
        self._client = client or httpx.Client(timeout=config.request_timeout)
        self._sleep = sleep

    def _backoff(self, attempt: int, retry_after: float | None = None) -> None:
        delay = retry_after if retry_after is not None else self.config.backoff_base * 2**attempt
        if delay > 0:
            self._sleep(delay)

    def complete(self, prompt: RenderedPrompt, text: str, images: tuple[bytes, bytes]) -> str:
        cfg = self.config
        body = encode_request(text, images, cfg.model_id, cfg.temperature, cfg.max_tokens)
        if cfg.debug_wire:
            wire_log.debug("request %s", json.dumps(_redacted(body)))
        last: TransportError | None = None
        for attempt in range(cfg.max_retries + 1):
            if attempt:
                self._backoff(attempt - 1, getattr(last, "retry_after", None))
            try:
                resp = self._client.post(
                    cfg.endpoint_url, json=body, headers=self._headers, timeout=cfg.request_timeout
                )
            except httpx.HTTPError as exc:
                last = TransportError(f"request failed: {exc.__class__.__name__}: {exc}")
                log.warning("judge request attempt %d failed: %s", attempt + 1, last)
                continue
            if cfg.debug_wire:
                wire_log.debug("response %d %s", resp.status_code, resp.text)
            if resp.status_code == 429:
                last = RateLimited("backend rate limit (HTTP 429)", _retry_after(resp))
                log.warning("rate limited on attempt %d", attempt + 1)
                continue
            if resp.status_code >= 500:
                last = TransportError(f"backend error HTTP {resp.status_code}")
                continue
            if resp.status_code >= 400:
                raise TransportError(f"backend rejected request: HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                doc = resp.json()
            except ValueError as exc:
                raise TransportError(f"response body is not JSON: {exc}") from exc
            return extract_response_text(doc)
        assert last is not None
        raise last

    def close(self) -> None:
        self._client.close()


def _retry_after(resp: httpx.Response) -> float | None:
    value = resp.headers.get("retry-after")
    try:
        return max(0.0, float(value)) if value is not None else None
    except ValueError:
        return None


# --- cache -----------------------------------------------------------------------


def cache_key(
    dataset: str,
    category: str,
    pair: PairTask,
    prompt_hash: str,
    model_id: str,
    temperature: float,
) -> str:
    fields = [dataset, category, pair.first, pair.second, prompt_hash, model_id, repr(float(temperature))]
    return hashlib.sha256(json.dumps(fields).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class CacheRecord:
    key: str
    verdicts: VerdictSet
    attempts: int
    dataset: str = ""
    category: str = ""

    def to_json(self) -> str:
        return json.dumps(
            {
                "key": self.key,
                "dataset": self.dataset,
                "category": self.category,
                "attempts": self.attempts,
                "verdicts": self.verdicts.to_dict(),
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, line: str) -> "CacheRecord":
        doc = json.loads(line)
        return cls(
            key=doc["key"],
            verdicts=VerdictSet.from_dict(doc["verdicts"]),
            attempts=int(doc["attempts"]),
            dataset=doc.get("dataset", ""),
            category=doc.get("category", ""),
        )


class VerdictCache:
    """Append-only JSONL store of judged pairs, one record per cache key.

    A corrupt final line (an interrupted write) is dropped on load; corrupt
    lines anywhere else raise :class:`CacheCorrupt`.
    """

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._records: dict[str, CacheRecord] = {}
        self._load()

    def _load(self) -> None:
        if not self.path.exists():
            return
        data = self.path.read_bytes()
        offset = 0
        good_end = 0
        lines = data.split(b"\n")
        for pos, raw in enumerate(lines):
            is_last = pos == len(lines) - 1
            end = offset + len(raw) + (0 if is_last else 1)
            if raw.strip():
                try:
                    rec = CacheRecord.from_json(raw.decode("utf-8"))
                except (ValueError, KeyError, TypeError, VerdictError) as exc:
                    trailing = not any(l.strip() for l in lines[pos + 1:])
                    if not trailing:
                        raise CacheCorrupt(f"{self.path}: corrupt record on line {pos + 1}: {exc}") from exc
                    log.warning("dropping truncated trailing record in %s", self.path)
                    with open(self.path, "r+b") as fh:
                        fh.truncate(good_end)
                    break
                self._records.setdefault(rec.key, rec)
                if is_last:
                    # complete record that lost its newline
                    with open(self.path, "ab") as fh:
                        fh.write(b"\n")
                    end += 1
            good_end = end
            offset = end

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, key: str) -> bool:
        return key in self._records

    def get(self, key: str) -> CacheRecord | None:
        return self._records.get(key)

    def put(self, record: CacheRecord) -> bool:
        """Append ``record`` unless its key is already stored. Returns True if written."""
        with self._lock:
            if record.key in self._records:
                return False
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(record.to_json() + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            self._records[record.key] = record
            return True


# --- judging ---------------------------------------------------------------------


def check_image(payload: bytes, limit: int, slot: str = "") -> tuple[int, int]:
    if not payload:
        raise EncodingError(f"image payload {slot} is empty")
    try:
        with Image.open(io.BytesIO(payload)) as img:
            width, height = img.size
    except OSError as exc:
        raise EncodingError(f"image payload {slot} is not a readable image: {exc}") from exc
    if width > limit or height > limit:
        raise ImageTooLarge(f"image {slot} is {width}x{height}, over the {limit}px limit")
    return width, height


class PairJudge:
    """Judges pairs through one backend, sharing a cache and a concurrency cap.

    Safe to call from several threads; at most ``concurrency_limit`` backend
    requests are in flight at once.
    """

    def __init__(
        self,
        config: JudgeConfig,
        template: PromptTemplate,
        backend: Backend,
        cache: VerdictCache | None = None,
        dataset: str = "",
    ):
        self.config = config
        self.template = template
        self.backend = backend
        self.cache = cache
        self.dataset = dataset
        self.prompt_hash = template.content_hash()
        self._slots = threading.BoundedSemaphore(config.concurrency_limit)
        self._count_lock = threading.Lock()
        self.backend_calls = 0
        self.cache_hits = 0

    def key_for(self, pair: PairTask, category: str = "") -> str:
        cfg = self.config
        return cache_key(self.dataset, category, pair, self.prompt_hash, cfg.effective_model_id, cfg.temperature)

    def judge(self, pair: PairTask, images: tuple[bytes, bytes], category: str = "") -> tuple[VerdictSet, bool]:
        """Return (verdicts, served_from_cache)."""
        key = self.key_for(pair, category)
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                with self._count_lock:
                    self.cache_hits += 1
                return hit.verdicts, True

        limit = self.config.max_image_dimension
        check_image(images[0], limit, "IMAGE_1")
        check_image(images[1], limit, "IMAGE_2")

        rendered = render_prompt(self.template, pair)
        text = rendered.text
        attempts = 0
        last_error: VerdictError | None = None
        verdicts = None
        while attempts <= self.config.max_retries:
            attempts += 1
            with self._slots:
                with self._count_lock:
                    self.backend_calls += 1
                response = self.backend.complete(rendered, text, images)
            try:
                verdicts = parse_verdicts(response, pair)
                break
            except VerdictError as exc:
                last_error = exc
                log.info("unparseable verdict for %s/%s (attempt %d): %s", pair.first, pair.second, attempts, exc)
                text = rendered.text + CORRECTIVE_SUFFIX
        if verdicts is None:
            raise JudgeFailure(
                f"pair ({pair.first}, {pair.second}): no parseable answer after {attempts} attempts: {last_error}"
            )
        verdicts = replace(
            verdicts,
            model_id=self.config.effective_model_id,
            temperature=self.config.temperature,
            timestamp=datetime.now(timezone.utc).isoformat(timespec="seconds"),
        )
        if self.cache is not None:
            self.cache.put(CacheRecord(key, verdicts, attempts, self.dataset, category))
        return verdicts, False


def make_backend(
    config: JudgeConfig,
    latent: Mapping[str, Mapping[Principle | str, float]] | None = None,
    client: httpx.Client | None = None,
) -> Backend:
    if config.backend == "simulated":
        return SimulatedBackend(latent or {}, config.noise_p, config.seed)
    return HttpBackend(config, client=client)


def judge_pair(
    config: JudgeConfig,
    template: PromptTemplate,
    pair: PairTask,
    images: tuple[bytes, bytes],
    backend: Backend | None = None,
    cache: VerdictCache | None = None,
    latent: Mapping[str, Mapping[Principle | str, float]] | None = None,
    dataset: str = "",
    category: str = "",
) -> VerdictSet:
    """One-shot convenience wrapper around :class:`PairJudge`."""
    backend = backend or make_backend(config, latent)
    return PairJudge(config, template, backend, cache, dataset).judge(pair, images, category)[0]

"""Completion-endpoint client with record/replay and client-side stop patterns."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Protocol, Sequence

import requests

from .corpus import Paragraph
from .errors import CTIKGError
from .prompting import PromptTemplate, render_prompt

logger = logging.getLogger(__name__)

GUIDANCE_STOP = r"\n|</s>"
DEFAULT_BEAM_WIDTH = 4


class LLMError(CTIKGError):
    pass


class TransportError(LLMError):
    pass


class ProtocolError(LLMError):
    pass


class UnsupportedDecoding(LLMError):
    pass


class ReplayMiss(LLMError):
    pass


class BadPattern(CTIKGError, ValueError):
    pass


DECODING_MODES = ("greedy", "beam_search", "multinomial", "beam_multinomial")


@dataclass(frozen=True)
class GenerationParams:
    """Decoding settings for one completion request."""

    temperature: float = 0.6
    repetition_penalty: float = 1.1
    max_tokens: int = 2048
    decoding: str = "greedy"
    beam_width: int = DEFAULT_BEAM_WIDTH
    stop_pattern: str | None = None
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.repetition_penalty < 1:
            raise ValueError("repetition_penalty must be >= 1")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")
        if self.decoding not in DECODING_MODES:
            raise ValueError(f"decoding must be one of {DECODING_MODES}, got {self.decoding!r}")
        if self.beam_width < 1:
            raise ValueError("beam_width must be positive")
        if self.stop_pattern is not None:
            _compile(self.stop_pattern)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "GenerationParams":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown generation params: {sorted(unknown)}")
        return cls(**d)


def _compile(pattern: str) -> re.Pattern[str]:
    try:
        return re.compile(pattern)
    except re.error as exc:
        raise BadPattern(f"bad stop pattern {pattern!r}: {exc}") from exc


def apply_stop_pattern(raw: str, pattern: str) -> str:
    """Cut ``raw`` right before the first match of ``pattern``."""
    m = _compile(pattern).search(raw)
    return raw if m is None else raw[: m.start()]


# --- backends ---------------------------------------------------------------


class CompletionBackend(Protocol):
    endpoint_id: str

    def generate(self, prompt: str, params: GenerationParams) -> str: ...


@dataclass(frozen=True)
class Endpoint:
    """An OpenAI-style ``/completions`` server.

    ``capabilities`` lists the decoding modes the server can honour; beam
    modes map onto ``use_beam_search``/``best_of`` and are refused unless
    declared.
    """

    base_url: str
    model: str
    api_key_env: str = "CTIKG_API_KEY"
    timeout: float = 60.0
    max_retries: int = 2
    capabilities: frozenset[str] = frozenset({"greedy", "multinomial"})

    @property
    def endpoint_id(self) -> str:
        return f"{self.base_url.rstrip('/')}#{self.model}"


class HttpBackend:
    def __init__(self, endpoint: Endpoint, session: requests.Session | None = None) -> None:
        self.endpoint = endpoint
        self.endpoint_id = endpoint.endpoint_id
        self._session = session or requests.Session()

    def request_body(self, prompt: str, params: GenerationParams) -> dict[str, Any]:
        if params.decoding not in self.endpoint.capabilities:
            raise UnsupportedDecoding(
                f"endpoint {self.endpoint_id} does not support {params.decoding} decoding"
            )
        body: dict[str, Any] = {
            "model": self.endpoint.model,
            "prompt": prompt,
            "max_tokens": params.max_tokens,
            "repetition_penalty": params.repetition_penalty,
            "n": 1,
        }
        if params.decoding == "greedy":
            body["temperature"] = 0.0
        elif params.decoding == "multinomial":
            body["temperature"] = params.temperature
        elif params.decoding == "beam_search":
            body.update(temperature=0.0, use_beam_search=True, best_of=params.beam_width)
        else:
            body.update(temperature=params.temperature, use_beam_search=True, best_of=params.beam_width)
        if params.seed is not None:
            body["seed"] = params.seed
        return body

    def generate(self, prompt: str, params: GenerationParams) -> str:
        body = self.request_body(prompt, params)
        url = self.endpoint.base_url.rstrip("/") + "/completions"
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.endpoint.api_key_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"

        attempt = 0
        while True:
            try:
                resp = self._session.post(url, json=body, headers=headers, timeout=self.endpoint.timeout)
            except requests.RequestException as exc:
                if attempt >= self.endpoint.max_retries:
                    raise TransportError(f"{url}: {exc}") from exc
            else:
                if resp.status_code < 500 and resp.status_code != 429:
                    break
                if attempt >= self.endpoint.max_retries:
                    raise TransportError(f"{url}: HTTP {resp.status_code}")
            attempt += 1
            time.sleep(min(0.5 * 2 ** (attempt - 1), 8.0))

        if resp.status_code >= 400:
            raise ProtocolError(f"{url}: HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            payload = resp.json()
            text = payload["choices"][0]["text"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"{url}: malformed completion response") from exc
        if not isinstance(text, str):
            raise ProtocolError(f"{url}: completion text is not a string")
        return text


def replay_key(prompt: str, params: GenerationParams, endpoint_id: str) -> str:
    blob = json.dumps(
        {"prompt": prompt, "params": params.to_dict(), "endpoint_id": endpoint_id},
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class CompletionRecord:
    prompt: str
    params: GenerationParams
    raw_output: str
    endpoint_id: str
    timestamp: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())

    @property
    def key(self) -> str:
        return replay_key(self.prompt, self.params, self.endpoint_id)

    def to_json(self) -> str:
        return json.dumps(
            {
                "key": self.key,
                "prompt": self.prompt,
                "params": self.params.to_dict(),
                "raw_output": self.raw_output,
                "endpoint_id": self.endpoint_id,
                "timestamp": self.timestamp,
            },
            ensure_ascii=False,
        )


class ReplayStore:
    """Append-only JSON-Lines store of completion records."""

    def __init__(self, path: str | Path | None = None) -> None:
        self.path = Path(path) if path is not None else None
        self._records: dict[str, CompletionRecord] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            with self.path.open(encoding="utf-8") as fh:
                for n, line in enumerate(fh, 1):
                    if not line.strip():
                        continue
                    try:
                        d = json.loads(line)
                        rec = CompletionRecord(
                            d["prompt"], GenerationParams.from_dict(d["params"]),
                            d["raw_output"], d["endpoint_id"], d.get("timestamp", ""),
                        )
                    except (ValueError, KeyError, TypeError) as exc:
                        raise LLMError(f"{self.path}:{n}: bad replay record ({exc})") from exc
                    self._records.setdefault(rec.key, rec)

    def __len__(self) -> int:
        return len(self._records)

    def get(self, prompt: str, params: GenerationParams, endpoint_id: str) -> CompletionRecord | None:
        return self._records.get(replay_key(prompt, params, endpoint_id))

    def add(self, record: CompletionRecord) -> None:
        with self._lock:
            if record.key in self._records:
                return
            self._records[record.key] = record
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(record.to_json() + "\n")


class ReplayBackend:
    """Serves stored outputs; unseen prompts raise :class:`ReplayMiss`."""

    def __init__(self, store: ReplayStore, endpoint_id: str = "replay") -> None:
        self.store = store
        self.endpoint_id = endpoint_id

    def generate(self, prompt: str, params: GenerationParams) -> str:
        rec = self.store.get(prompt, params, self.endpoint_id)
        if rec is None:
            raise ReplayMiss(f"no recorded completion for key {replay_key(prompt, params, self.endpoint_id)[:12]}")
        return rec.raw_output


class RecordingBackend:
    """Passes calls through to ``inner`` and appends every answer to ``store``."""

    def __init__(self, inner: CompletionBackend, store: ReplayStore) -> None:
        self.inner = inner
        self.store = store
        self.endpoint_id = inner.endpoint_id

    def generate(self, prompt: str, params: GenerationParams) -> str:
        text = self.inner.generate(prompt, params)
        self.store.add(CompletionRecord(prompt, params, text, self.endpoint_id))
        return text


def complete(backend: CompletionBackend, prompt: str, params: GenerationParams) -> str:
    """Run one completion and apply the client-side stop pattern, if any."""
    raw = backend.generate(prompt, params)
    if params.stop_pattern:
        raw = apply_stop_pattern(raw, params.stop_pattern)
    return raw


# --- batch extraction -------------------------------------------------------


@dataclass(frozen=True)
class ExtractionRecord:
    paragraph: Paragraph
    raw_output: str | None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.paragraph.key,
            "doc_id": self.paragraph.doc_id,
            "index": self.paragraph.index,
            "raw_output": self.raw_output,
            "error": self.error,
        }


def _load_checkpoint(path: Path) -> dict[str, dict[str, Any]]:
    done: dict[str, dict[str, Any]] = {}
    if not path.exists():
        return done
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            try:
                d = json.loads(line)
            except ValueError:
                # torn final line after a crash
                continue
            if d.get("error") is None:
                done[d["id"]] = d
    return done


def batch_extract(
    backend: CompletionBackend,
    paragraphs: Sequence[Paragraph],
    template: PromptTemplate,
    params: GenerationParams,
    *,
    concurrency: int = 8,
    checkpoint: str | Path | None = None,
) -> list[ExtractionRecord]:
    """Prompt the model once per paragraph, keeping input order.

    Failures are captured per item. With ``checkpoint`` set, every finished
    item is appended to that JSON-Lines file as soon as it completes, and
    successful items already present there are not requested again.
    """
    if concurrency < 1:
        raise ValueError("concurrency must be >= 1")
    ckpt = Path(checkpoint) if checkpoint is not None else None
    done = _load_checkpoint(ckpt) if ckpt is not None else {}
    write_lock = threading.Lock()
    results: list[ExtractionRecord | None] = [None] * len(paragraphs)

    def persist(rec: ExtractionRecord, prompt_key: str) -> None:
        if ckpt is None:
            return
        line = json.dumps({**rec.to_dict(), "prompt_key": prompt_key}, ensure_ascii=False)
        with write_lock:
            ckpt.parent.mkdir(parents=True, exist_ok=True)
            with ckpt.open("a", encoding="utf-8") as fh:
                fh.write(line + "\n")

    def work(i: int) -> None:
        para = paragraphs[i]
        prompt_key = ""
        try:
            prompt = render_prompt(template, para.text)
            prompt_key = replay_key(prompt, params, backend.endpoint_id)
            prior = done.get(para.key)
            if prior is not None and prior.get("prompt_key") == prompt_key:
                results[i] = ExtractionRecord(para, prior["raw_output"])
                return
            rec = ExtractionRecord(para, complete(backend, prompt, params))
        except Exception as exc:  # noqa: BLE001 - one bad item must not sink the batch
            logger.warning("extraction failed for %s: %s", para.key, exc)
            rec = ExtractionRecord(para, None, f"{type(exc).__name__}: {exc}")
        results[i] = rec
        persist(rec, prompt_key)

    total = len(paragraphs)
    with ThreadPoolExecutor(max_workers=concurrency) as pool:
        for n, _ in enumerate(pool.map(work, range(total)), 1):
            if n % 100 == 0 or n == total:
                logger.info("extracted %d/%d paragraphs", n, total)

    failures = sum(1 for r in results if r is not None and not r.ok)
    if failures:
        logger.warning("%d of %d paragraphs failed", failures, total)
    return [r for r in results if r is not None]


def load_params_file(path: str | Path) -> GenerationParams:
    return GenerationParams.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


"""Uniform chat-completion access: rendering, retries, audit ledger."""
from __future__ import annotations

import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Protocol, TypeVar

from ..textutil import sha256_hex, tokenize
from .templates import PromptTemplate, load_template

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


class ProviderError(RuntimeError):
    """Non-retryable provider failure."""


class TransientProviderError(ProviderError):
    """Rate limits, 5xx responses and transport failures; retried with backoff."""


class RetriesExhaustedError(ProviderError):
    def __init__(self, attempts: int, last: Exception):
        super().__init__(f"gave up after {attempts} attempt(s): {last}")
        self.attempts = attempts
        self.last = last


class ContextLengthError(ProviderError):
    def __init__(self, prompt_tokens: int, limit: int | None):
        super().__init__(f"prompt of ~{prompt_tokens} tokens exceeds context limit {limit}")
        self.prompt_tokens = prompt_tokens
        self.limit = limit


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int
    completion_tokens: int
    reasoning_tokens: int | None = None

    def __post_init__(self) -> None:
        if self.prompt_tokens < 0 or self.completion_tokens < 0 or (self.reasoning_tokens or 0) < 0:
            raise ValueError("usage counts must be non-negative")

    def to_dict(self) -> dict:
        return {
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "reasoning_tokens": self.reasoning_tokens,
        }


@dataclass(frozen=True)
class LlmRequest:
    template_id: str
    bindings: Mapping[str, str]
    prompt: str
    model_id: str
    temperature: float = 0.0
    max_output_tokens: int | None = None
    reasoning_budget: int | None = None


@dataclass(frozen=True)
class ProviderResponse:
    text: str
    usage: Usage | None = None


class Provider(Protocol):
    def send(self, request: LlmRequest) -> ProviderResponse: ...


@dataclass(frozen=True)
class LlmCall:
    template_id: str
    bindings: Mapping[str, str]
    model_id: str
    response_text: str
    usage: Usage
    latency_ms: float
    attempt_count: int

    def __post_init__(self) -> None:
        if self.attempt_count < 1:
            raise ValueError("attempt_count must be >= 1")


class Ledger:
    """Append-only record of every complete() invocation, failures included."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self.entries: list[dict] = []
        self._lock = threading.Lock()
        # Continue numbering after entries left by earlier runs.
        self._seq = len(self.read(self.path)) if self.path is not None and self.path.exists() else 0

    def append(self, entry: dict) -> None:
        with self._lock:
            entry = {"seq": self._seq, **entry}
            self._seq += 1
            self.entries.append(entry)
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(entry, ensure_ascii=False, sort_keys=True) + "\n")

    def totals(self) -> dict[str, int]:
        out = {"calls": 0, "prompt_tokens": 0, "completion_tokens": 0, "reasoning_tokens": 0}
        for e in self.entries:
            out["calls"] += 1
            usage = e.get("usage") or {}
            for key in ("prompt_tokens", "completion_tokens", "reasoning_tokens"):
                out[key] += usage.get(key) or 0
        return out

    @staticmethod
    def read(path: str | Path) -> list[dict]:
        with open(path, encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]


def count_tokens(text: str) -> int:
    return len(tokenize(text))


class Gateway:
    def __init__(
        self,
        provider: Provider,
        model_id: str,
        *,
        ledger: Ledger | None = None,
        temperature: float = 0.0,
        max_output_tokens: int | None = None,
        reasoning_budget: int | None = None,
        context_window: int | None = None,
        max_attempts: int = 5,
        backoff_base: float = 0.5,
        backoff_cap: float = 30.0,
        parallelism: int = 1,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        self.provider = provider
        self.model_id = model_id
        self.ledger = ledger if ledger is not None else Ledger()
        self.temperature = temperature
        self.max_output_tokens = max_output_tokens
        self.reasoning_budget = reasoning_budget
        self.context_window = context_window
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.backoff_cap = backoff_cap
        self.parallelism = parallelism
        self._sleep = sleep

    def prompt_budget(self) -> int | None:
        """Tokens available to the rendered prompt, or None when unlimited."""
        if self.context_window is None:
            return None
        return self.context_window - (self.max_output_tokens or 0)

    def complete(
        self,
        template: PromptTemplate | str,
        bindings: Mapping[str, Any],
        *,
        model_id: str | None = None,
        meta: Mapping[str, Any] | None = None,
    ) -> LlmCall:
        if isinstance(template, str):
            template = load_template(template)
        bindings = {k: str(v) for k, v in bindings.items()}
        model = model_id or self.model_id
        entry: dict[str, Any] = {
            "template_id": template.template_id,
            "model_id": model,
            "meta": dict(meta or {}),
        }
        try:
            prompt = template.render(bindings)
        except KeyError as exc:
            self.ledger.append({**entry, "status": "error", "error": str(exc), "attempt_count": 0})
            raise
        entry["prompt_sha256"] = sha256_hex(prompt)
        prompt_tokens = count_tokens(prompt)
        budget = self.prompt_budget()
        if budget is not None and prompt_tokens > budget:
            err = ContextLengthError(prompt_tokens, budget)
            self.ledger.append({**entry, "status": "error", "error": str(err), "attempt_count": 0})
            raise err

        request = LlmRequest(
            template.template_id, bindings, prompt, model,
            self.temperature, self.max_output_tokens, self.reasoning_budget,
        )
        start = time.perf_counter()
        attempt = 0
        while True:
            attempt += 1
            try:
                resp = self.provider.send(request)
                break
            except TransientProviderError as exc:
                if attempt >= self.max_attempts:
                    err = RetriesExhaustedError(attempt, exc)
                    self._fail(entry, err, attempt, start)
                    raise err from exc
                delay = min(self.backoff_cap, self.backoff_base * 2 ** (attempt - 1))
                logger.info("transient provider error (%s); retry %d in %.2fs", exc, attempt, delay)
                self._sleep(delay)
            except Exception as exc:
                self._fail(entry, exc, attempt, start)
                raise

        usage = resp.usage or Usage(prompt_tokens, count_tokens(resp.text))
        latency = (time.perf_counter() - start) * 1000.0
        call = LlmCall(template.template_id, bindings, model, resp.text, usage, latency, attempt)
        self.ledger.append({
            **entry,
            "status": "ok",
            "response_text": resp.text,
            "usage": usage.to_dict(),
            "latency_ms": round(latency, 3),
            "attempt_count": attempt,
        })
        return call

    def _fail(self, entry: dict, exc: Exception, attempt: int, start: float) -> None:
        self.ledger.append({
            **entry,
            "status": "error",
            "error": f"{type(exc).__name__}: {exc}",
            "attempt_count": attempt,
            "latency_ms": round((time.perf_counter() - start) * 1000.0, 3),
        })

    def map(self, fn: Callable[[T], R], items: Iterable[T]) -> list[R]:
        """Apply ``fn`` in order; sequential unless parallelism > 1."""
        items = list(items)
        if self.parallelism <= 1:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(max_workers=self.parallelism) as pool:
            return list(pool.map(fn, items))

"""Concrete providers: an OpenAI-compatible HTTP client and provider config loading."""
from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .gateway import (
    ContextLengthError,
    LlmRequest,
    ProviderError,
    ProviderResponse,
    TransientProviderError,
    Usage,
)

CONTEXT_ERROR_MARKERS = ("context_length", "context length", "maximum context", "too many tokens")


@dataclass
class ProviderConfig:
    kind: str = "mock"  # "openai" | "mock"
    model: str = "mock-model"
    endpoint: str = "https://api.openai.com/v1"
    api_key_env: str = "OPENAI_API_KEY"
    temperature: float = 0.0
    max_output_tokens: int | None = None
    reasoning_budget: int | None = None
    context_window: int | None = None
    timeout: float = 120.0
    max_attempts: int = 5
    backoff_base: float = 0.5
    parallelism: int = 1
    fixtures: str | None = None
    extra_body: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "ProviderConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown provider config keys: {sorted(unknown)}")
        return cls(**d)


class OpenAICompatibleProvider:
    """POSTs to ``{endpoint}/chat/completions``."""

    def __init__(self, endpoint: str, api_key: str | None = None, timeout: float = 120.0,
                 extra_body: dict | None = None, session=None):
        import requests

        self._requests = requests
        self.url = endpoint.rstrip("/") + "/chat/completions"
        self.session = session or requests.Session()
        if api_key:
            self.session.headers["Authorization"] = f"Bearer {api_key}"
        self.timeout = timeout
        self.extra_body = dict(extra_body or {})

    def send(self, request: LlmRequest) -> ProviderResponse:
        body: dict[str, Any] = {
            "model": request.model_id,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
        }
        if request.max_output_tokens is not None:
            body["max_tokens"] = request.max_output_tokens
        if request.reasoning_budget is not None:
            body["reasoning"] = {"max_tokens": request.reasoning_budget}
        body.update(self.extra_body)
        try:
            resp = self.session.post(self.url, json=body, timeout=self.timeout)
        except self._requests.RequestException as exc:
            raise TransientProviderError(f"{type(exc).__name__}: {exc}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientProviderError(f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            text = resp.text or ""
            if any(m in text.lower() for m in CONTEXT_ERROR_MARKERS):
                raise ContextLengthError(-1, None)
            raise ProviderError(f"HTTP {resp.status_code}: {text[:300]}")
        try:
            payload = resp.json()
            content = payload["choices"][0]["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"malformed response: {exc}") from exc
        usage = None
        u = payload.get("usage")
        if isinstance(u, dict) and "prompt_tokens" in u:
            details = u.get("completion_tokens_details") or {}
            usage = Usage(
                int(u.get("prompt_tokens") or 0),
                int(u.get("completion_tokens") or 0),
                details.get("reasoning_tokens"),
            )
        return ProviderResponse(content, usage)


def build_gateway(config: ProviderConfig, ledger_path: str | Path | None = None, base_dir: Path | None = None):
    """Construct a Gateway for ``config``; relative fixture paths resolve against ``base_dir``."""
    from .gateway import Gateway, Ledger
    from .mock import MockProvider

    if config.kind == "mock":
        fixtures = None
        if config.fixtures:
            fixtures = Path(config.fixtures)
            if base_dir is not None and not fixtures.is_absolute():
                fixtures = base_dir / fixtures
        provider = MockProvider.from_file(fixtures) if fixtures else MockProvider()
    elif config.kind == "openai":
        provider = OpenAICompatibleProvider(
            config.endpoint, os.environ.get(config.api_key_env), config.timeout, config.extra_body
        )
    else:
        raise ValueError(f"unknown provider kind {config.kind!r}")
    return Gateway(
        provider,
        config.model,
        ledger=Ledger(ledger_path),
        temperature=config.temperature,
        max_output_tokens=config.max_output_tokens,
        reasoning_budget=config.reasoning_budget,
        context_window=config.context_window,
        max_attempts=config.max_attempts,
        backoff_base=config.backoff_base,
        parallelism=config.parallelism,
    )

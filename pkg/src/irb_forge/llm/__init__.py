"""LLM access: prompt templates, the retrying gateway, and providers."""
from .gateway import (
    ContextLengthError,
    Gateway,
    Ledger,
    LlmCall,
    LlmRequest,
    Provider,
    ProviderError,
    ProviderResponse,
    RetriesExhaustedError,
    TransientProviderError,
    Usage,
    count_tokens,
)
from .mock import FixtureEntry, MockProvider
from .providers import OpenAICompatibleProvider, ProviderConfig, build_gateway
from .templates import TEMPLATE_IDS, MissingPlaceholderError, PromptTemplate, load_template

__all__ = [
    "ContextLengthError",
    "FixtureEntry",
    "Gateway",
    "Ledger",
    "LlmCall",
    "LlmRequest",
    "MissingPlaceholderError",
    "MockProvider",
    "OpenAICompatibleProvider",
    "PromptTemplate",
    "Provider",
    "ProviderConfig",
    "ProviderError",
    "ProviderResponse",
    "RetriesExhaustedError",
    "TEMPLATE_IDS",
    "TransientProviderError",
    "Usage",
    "build_gateway",
    "count_tokens",
    "load_template",
]

"""LLM chat and embedding access."""

from .cache import DiskCache
from .client import (
    API_BASE_ENV,
    API_KEY_ENV,
    ChatRequest,
    ConfigurationError,
    ContentRisk,
    DimensionMismatch,
    Gateway,
    GatewayError,
    GatewayResponse,
    OpenAIChatBackend,
    OpenAIEmbedBackend,
    TransportError,
)
from .doubles import HashEmbedder, KeywordChat, ScriptedChat

__all__ = [
    "API_BASE_ENV",
    "API_KEY_ENV",
    "ChatRequest",
    "ConfigurationError",
    "ContentRisk",
    "DimensionMismatch",
    "DiskCache",
    "Gateway",
    "GatewayError",
    "GatewayResponse",
    "HashEmbedder",
    "KeywordChat",
    "OpenAIChatBackend",
    "OpenAIEmbedBackend",
    "ScriptedChat",
    "TransportError",
]

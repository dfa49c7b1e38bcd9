"""Chat-completion clients: an OpenAI-compatible HTTP client and a scripted mock."""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import httpx


class TransportError(RuntimeError):
    """The model endpoint could not produce a reply."""


@dataclass(frozen=True)
class Message:
    role: str  # "user" or "assistant"
    content: str

    def to_dict(self) -> dict:
        return {"role": self.role, "content": self.content}


class ChatClient(Protocol):
    def complete(self, messages: Sequence[Message]) -> str: ...


@dataclass(frozen=True)
class LlmEndpoint:
    base_url: str = "https://api.openai.com/v1"
    model: str = "o3-mini"
    api_key_env: str = "OPENAI_API_KEY"
    temperature: float = 0.7
    timeout: float = 120.0
    retries: int = 3

    @classmethod
    def from_dict(cls, d: dict) -> "LlmEndpoint":
        if "api_key" in d:
            raise ValueError("API keys must come from the environment, not the config file")
        return cls(**d)


class OpenAIChatClient:
    """POSTs to ``{base_url}/chat/completions`` and returns the first choice's content."""

    def __init__(self, endpoint: LlmEndpoint, transport: httpx.BaseTransport | None = None):
        self.endpoint = endpoint
        key = os.environ.get(endpoint.api_key_env)
        if not key:
            raise TransportError(f"environment variable {endpoint.api_key_env} is not set")
        self._client = httpx.Client(
            base_url=endpoint.base_url.rstrip("/"),
            headers={"Authorization": f"Bearer {key}"},
            timeout=endpoint.timeout,
            transport=transport,
        )

    def complete(self, messages: Sequence[Message]) -> str:
        payload = {
            "model": self.endpoint.model,
            "messages": [m.to_dict() for m in messages],
            "temperature": self.endpoint.temperature,
        }
        last_error = "no attempt made"
        for attempt in range(self.endpoint.retries + 1):
            try:
                resp = self._client.post("/chat/completions", json=payload)
                if resp.status_code == 200:
                    return resp.json()["choices"][0]["message"]["content"]
                last_error = f"HTTP {resp.status_code}: {resp.text[:200]}"
                if resp.status_code < 500 and resp.status_code != 429:
                    break
            except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
                last_error = f"{type(exc).__name__}: {exc}"
            if attempt < self.endpoint.retries:
                time.sleep(min(2.0**attempt, 30.0))
        raise TransportError(last_error)


class MockClient:
    """Returns scripted replies in order; raises :class:`TransportError` once exhausted."""

    def __init__(self, responses: Sequence[str]):
        self.responses = list(responses)
        self.calls: list[list[Message]] = []

    def complete(self, messages: Sequence[Message]) -> str:
        self.calls.append(list(messages))
        i = len(self.calls) - 1
        if i >= len(self.responses):
            raise TransportError("mock script exhausted")
        return self.responses[i]

    @classmethod
    def from_file(cls, path) -> "MockClient":
        data = json.loads(Path(path).read_text())
        if not isinstance(data, list) or not all(isinstance(x, str) for x in data):
            raise ValueError("mock script must be a JSON list of strings")
        return cls(data)

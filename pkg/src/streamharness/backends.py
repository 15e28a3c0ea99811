"""Model backends and the chat-completions wire format.

Requests follow the common JSON shape
``{model, messages: [{role, content}], max_tokens, temperature}``;
multimodal content entries carry frame references as image-URL parts.
Responses are parsed from ``choices[0].message.content`` and
``usage.completion_tokens``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Optional, Protocol

import requests

from .cache import DiskCache, content_key
from .errors import BackendError, InvalidInputError


@dataclass(frozen=True)
class ChatReply:
    text: str
    completion_tokens: Optional[int] = None


def text_message(role: str, text: str) -> dict:
    return {"role": role, "content": text}


def frame_message(role: str, frame_refs: list[str], text: Optional[str] = None) -> dict:
    """A multimodal message carrying frame references as image-URL parts."""
    content: list[dict] = [
        {"type": "image_url", "image_url": {"url": ref}} for ref in frame_refs
    ]
    if text is not None:
        content.append({"type": "text", "text": text})
    return {"role": role, "content": content}


#: transport(url, payload, headers, timeout) -> (status_code, parsed_json)
Transport = Callable[[str, dict, dict, float], tuple[int, dict]]


def _requests_transport(url: str, payload: dict, headers: dict, timeout: float) -> tuple[int, dict]:
    resp = requests.post(url, json=payload, headers=headers, timeout=timeout)
    return resp.status_code, resp.json()


class ChatCompletionsClient:
    """HTTP chat-completions client with bounded retry.

    Transport failures and 5xx responses are retried ``max_retries``
    times with exponential backoff; the caller sees a ``BackendError``
    only after the policy is exhausted. The transport is injectable so
    tests can count or fail requests deterministically.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: Optional[str] = None,
        timeout: float = 60.0,
        max_retries: int = 2,
        temperature: float = 0.0,
        max_tokens: Optional[int] = None,
        transport: Optional[Transport] = None,
        backoff_base: float = 0.5,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if timeout <= 0:
            raise InvalidInputError("timeout must be positive")
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self.max_retries = max_retries
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.transport = transport or _requests_transport
        self.backoff_base = backoff_base
        self.sleep = sleep

    def complete(self, messages: list[dict]) -> ChatReply:
        payload: dict = {
            "model": self.model,
            "messages": messages,
            "temperature": self.temperature,
        }
        if self.max_tokens is not None:
            payload["max_tokens"] = self.max_tokens
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"

        last_error: Optional[Exception] = None
        for attempt in range(self.max_retries + 1):
            try:
                status, body = self.transport(self.endpoint, payload, headers, self.timeout)
            except (requests.RequestException, ConnectionError, TimeoutError) as exc:
                last_error = exc
            else:
                if status >= 500:
                    last_error = BackendError(f"server error {status} from {self.endpoint}")
                elif status >= 400:
                    raise BackendError(f"request rejected with status {status}: {body}")
                else:
                    return self._parse_reply(body)
            if attempt < self.max_retries:
                self.sleep(self.backoff_base * (2**attempt))
        raise BackendError(
            f"backend {self.endpoint} failed after {self.max_retries + 1} attempts"
        ) from last_error

    @staticmethod
    def _parse_reply(body: dict) -> ChatReply:
        try:
            text = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed chat-completions response: {body!r}") from exc
        usage = body.get("usage") or {}
        tokens = usage.get("completion_tokens")
        return ChatReply(text=text if isinstance(text, str) else "", completion_tokens=tokens)


# -- text backends (judging and pipeline stages are text-only) -------------

class TextBackend(Protocol):
    """Any callable service mapping a prompt to raw completion text."""

    model_id: str

    def complete_text(self, prompt: str) -> str: ...


@dataclass
class ScriptedTextBackend:
    """Deterministic backend driven by a prompt -> text function."""

    program: Callable[[str], str]
    model_id: str = "scripted"

    def complete_text(self, prompt: str) -> str:
        return self.program(prompt)


class HttpTextBackend:
    def __init__(self, client: ChatCompletionsClient):
        self.client = client
        self.model_id = client.model

    def complete_text(self, prompt: str) -> str:
        return self.client.complete([text_message("user", prompt)]).text


class CachedTextBackend:
    """Content-addressed memoization wrapper around any text backend.

    Keys combine the backend's model id and the exact prompt bytes, so a
    cache hit is always a byte-faithful replay of an earlier call.
    """

    def __init__(self, inner: TextBackend, cache: DiskCache):
        self.inner = inner
        self.cache = cache
        self.model_id = inner.model_id

    def key_for(self, prompt: str) -> str:
        return content_key(self.model_id, prompt)

    def complete_text(self, prompt: str) -> str:
        key = self.key_for(prompt)
        record = self.cache.get(key)
        if record is not None:
            return record["text"]
        text = self.inner.complete_text(prompt)
        self.cache.put(key, {"model_id": self.model_id, "text": text})
        return text

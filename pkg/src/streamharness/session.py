"""Frame-level session driver.

Presents frames and queries to a backend one turn at a time under the
causal constraint: the request for turn t contains frames 1..t, queries
issued up to t, and the model's own prior actions, and nothing else.
Frames are opaque references passed through to the backend.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Protocol, Sequence, Union

from .backends import ChatCompletionsClient, frame_message, text_message
from .errors import BackendError, ContextOverflowError, InvalidInputError
from .timeline import SILENT_MARKER, Action, StreamTimeline, Trajectory

#: Visual token budgets the harness knows how to configure.
TOKEN_BUDGETS = (128, 768)

DEFAULT_SYSTEM_PROMPT = (
    "You are a streaming video assistant. Frames arrive one at a time. "
    "At each turn, decide whether to respond. If you choose not to respond "
    f'this turn, output exactly "{SILENT_MARKER}" and nothing else. '
    "Answer user questions concisely when visual evidence supports an answer."
)


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "scripted"  # http-chat | scripted
    endpoint: Optional[str] = None
    model: Optional[str] = None
    auth_token: Optional[str] = None
    tokens_per_frame: int = 768
    temperature: float = 0.0
    max_tokens: Optional[int] = None
    timeout: float = 60.0
    system_prompt: str = DEFAULT_SYSTEM_PROMPT

    def __post_init__(self):
        if self.tokens_per_frame not in TOKEN_BUDGETS:
            raise InvalidInputError(
                f"tokens_per_frame must be one of {TOKEN_BUDGETS}, got {self.tokens_per_frame}"
            )
        if self.timeout <= 0:
            raise InvalidInputError("timeout must be positive")
        if self.kind not in ("http-chat", "scripted"):
            raise InvalidInputError(f"unknown backend kind: {self.kind!r}")

    def fingerprint(self) -> str:
        payload = json.dumps(
            {
                "kind": self.kind,
                "endpoint": self.endpoint,
                "model": self.model,
                "tokens_per_frame": self.tokens_per_frame,
                "temperature": self.temperature,
                "max_tokens": self.max_tokens,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class VisibleHistory:
    """Everything a backend may condition on at one turn.

    ``frames`` holds references 1..t, ``queries`` every query issued at a
    turn <= t, and ``actions`` the model's own actions for turns 1..t-1.
    """

    frames: tuple[str, ...]
    queries: Mapping[int, str]
    actions: tuple[Action, ...]

    @property
    def turn(self) -> int:
        return len(self.frames)


class SessionBackend(Protocol):
    """One turn-level decision service."""

    def act(self, turn: int, history: VisibleHistory) -> tuple[Optional[str], Optional[int]]:
        """Return (raw output text or None for silence, completion tokens)."""
        ...


#: A scripted program maps (turn, visible history) to raw output text,
#: None (silence), or a ready-made Action.
ScriptedProgram = Callable[[int, VisibleHistory], Union[str, None, Action]]


class ScriptedSessionBackend:
    """Deterministic backend for tests and offline smoke runs."""

    def __init__(self, program: ScriptedProgram):
        self.program = program

    def act(self, turn: int, history: VisibleHistory) -> tuple[Optional[str], Optional[int]]:
        result = self.program(turn, history)
        if isinstance(result, Action):
            return (result.text, result.completion_tokens)
        return (result, None)


def scripted_backend(program: ScriptedProgram) -> ScriptedSessionBackend:
    return ScriptedSessionBackend(program)


class HttpSessionBackend:
    """Chat-completions backend: renders the causal history as a chat."""

    def __init__(self, config: BackendConfig, client: Optional[ChatCompletionsClient] = None):
        if config.kind != "http-chat":
            raise InvalidInputError("HttpSessionBackend requires an http-chat config")
        if not config.endpoint or not config.model:
            raise InvalidInputError("http-chat backend needs endpoint and model")
        self.config = config
        self.client = client or ChatCompletionsClient(
            endpoint=config.endpoint,
            model=config.model,
            api_key=config.auth_token,
            timeout=config.timeout,
            temperature=config.temperature,
            max_tokens=config.max_tokens,
        )

    def build_messages(self, history: VisibleHistory) -> list[dict]:
        messages = [text_message("system", self.config.system_prompt)]
        for i, frame_ref in enumerate(history.frames, start=1):
            messages.append(frame_message("user", [frame_ref], history.queries.get(i)))
            if i <= len(history.actions):
                action = history.actions[i - 1]
                messages.append(text_message("assistant", action.text or SILENT_MARKER))
        return messages

    def act(self, turn: int, history: VisibleHistory) -> tuple[Optional[str], Optional[int]]:
        reply = self.client.complete(self.build_messages(history))
        return (reply.text, reply.completion_tokens)


@dataclass(frozen=True)
class TurnTranscript:
    turn: int
    query: Optional[str]
    raw_output: Optional[str]
    failed: bool = False

    def to_json(self) -> dict:
        return {
            "turn": self.turn,
            "query": self.query,
            "raw_output": self.raw_output,
            "failed": self.failed,
        }


@dataclass(frozen=True)
class SessionRecord:
    timeline: StreamTimeline
    trajectory: Trajectory
    transcript: tuple[TurnTranscript, ...]
    backend_fingerprint: str = ""

    def __post_init__(self):
        if len(self.transcript) != len(self.trajectory):
            raise InvalidInputError("transcript and trajectory turn counts differ")


def run_session(
    timeline: StreamTimeline,
    frames: Sequence[str],
    backend: SessionBackend,
    backend_fingerprint: str = "",
    max_context_turns: Optional[int] = None,
) -> SessionRecord:
    """Drive one frame-level multi-turn session.

    The backend never sees frames beyond the current turn. A backend
    failure (after the client's own retry policy) records a Silent turn
    with a failure flag so the sample still scores conservatively.
    Exceeding ``max_context_turns`` aborts with a context-overflow error
    instead of silently truncating history, which would break causality
    bookkeeping.
    """
    if len(frames) != timeline.turn_count:
        raise InvalidInputError(
            f"frame count {len(frames)} != turn count {timeline.turn_count}"
        )
    if max_context_turns is not None and timeline.turn_count > max_context_turns:
        raise ContextOverflowError(
            f"sample {timeline.sample_id!r} needs {timeline.turn_count} turns, "
            f"cap is {max_context_turns}"
        )

    actions: list[Action] = []
    transcript: list[TurnTranscript] = []
    for t in range(1, timeline.turn_count + 1):
        history = VisibleHistory(
            frames=tuple(frames[:t]),
            queries={i: q for i, q in timeline.queries.items() if i <= t},
            actions=tuple(actions),
        )
        try:
            raw_text, tokens = backend.act(t, history)
            failed = False
        except BackendError:
            raw_text, tokens = None, 0
            failed = True
        actions.append(Action.from_raw(raw_text, tokens))
        transcript.append(
            TurnTranscript(turn=t, query=timeline.query_at(t), raw_output=raw_text, failed=failed)
        )

    return SessionRecord(
        timeline=timeline,
        trajectory=Trajectory(sample_id=timeline.sample_id, turns=tuple(actions)),
        transcript=tuple(transcript),
        backend_fingerprint=backend_fingerprint,
    )

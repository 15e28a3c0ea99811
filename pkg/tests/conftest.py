"""Shared builders for scripted sessions, judges, and synthetic videos."""

from __future__ import annotations

import json
import re
from typing import Callable, Mapping, Optional

import pytest

from streamharness import (
    Action,
    GroundTruthSpec,
    ReferenceAnswer,
    ScriptedTextBackend,
    StreamTimeline,
    Subtask,
    TaskMode,
    Trajectory,
)
from streamharness.timeline import SUBTASK_MODE


def make_timeline(
    sample_id: str = "s1",
    subtask: Subtask = Subtask.OCR,
    turn_count: int = 8,
    gt_turns: tuple[int, ...] = (4,),
    delta: Optional[int] = None,
    queries: Optional[Mapping[int, str]] = None,
    references: Optional[Mapping[int, ReferenceAnswer]] = None,
    options: Optional[tuple[str, ...]] = None,
) -> StreamTimeline:
    mode = SUBTASK_MODE[subtask]
    if delta is None:
        delta = 5 if mode is TaskMode.FORWARD_ACTIVE else 0
    if references is None:
        references = {t: ReferenceAnswer(text=f"ref-{t}") for t in gt_turns}
    if queries is None:
        queries = {1: f"question for {sample_id}"}
    return StreamTimeline(
        sample_id=sample_id,
        turn_count=turn_count,
        ground_truth=GroundTruthSpec(
            mode=mode,
            subtask=subtask,
            gt_timestamps=frozenset(gt_turns),
            references=dict(references),
            delta=delta,
            options=options,
        ),
        queries=dict(queries),
    )


def make_trajectory(
    sample_id: str,
    turn_count: int,
    responses: Mapping[int, str] | tuple[int, ...] = (),
    tokens_per_response: int = 3,
) -> Trajectory:
    if not isinstance(responses, Mapping):
        responses = {t: f"answer at {t}" for t in responses}
    turns = []
    for t in range(1, turn_count + 1):
        if t in responses:
            turns.append(Action.respond(responses[t], tokens_per_response))
        else:
            turns.append(Action.silent())
    return Trajectory(sample_id=sample_id, turns=tuple(turns))


#: Substrings that identify which rendered template a prompt came from.
PROMPT_SIGNATURES = {
    "C1-accuracy": "expert evaluator for video understanding",
    "C2-repetition": "repetitive behavior",
    "C3-crr-intention": "substantive and direct ANSWER",
    "C4-ssr-rec-intention": "intention to DESCRIBE or RECOGNIZE",
    "C5-far-crr": "Expected Answer:",
    "C6-far-ssr": "Expected Step/Stage:",
    "C7-far-rec": "Activity being counted:",
    "B1-question-generation": "expert video analyst",
    "B2-relevance-annotation": "segment time range",
    "B3-question-selection": "selecting the best question",
    "B4-response-decision": "decide whether to generate a response",
    "classify": "assigning a streaming task category",
}


def identify_prompt(prompt: str) -> str:
    for template_id, needle in PROMPT_SIGNATURES.items():
        if needle in prompt:
            return template_id
    raise AssertionError(f"unrecognized prompt: {prompt[:120]!r}")


#: Well-formed judge replies, one per verdict family.
REPLY_CORRECT = json.dumps({"correct": True, "reasoning": "matches"})
REPLY_INCORRECT = json.dumps({"correct": False, "reasoning": "differs"})
REPLY_NOT_REPEATED = json.dumps({"is_repeated": False})
REPLY_REPEATED = json.dumps({"is_repeated": True})
REPLY_YES = "yes"
REPLY_NO = "no"


def dispatching_judge(
    handlers: Mapping[str, str | Callable[[str], str]],
    default: Optional[str] = None,
    model_id: str = "scripted-judge",
) -> ScriptedTextBackend:
    """A text backend that answers per recognized template."""

    def program(prompt: str) -> str:
        template_id = identify_prompt(prompt)
        handler = handlers.get(template_id, default)
        if handler is None:
            raise AssertionError(f"no handler for template {template_id}")
        return handler(prompt) if callable(handler) else handler

    return ScriptedTextBackend(program=program, model_id=model_id)


class CallCounter:
    """Wraps a text backend program and counts invocations."""

    def __init__(self, program: Callable[[str], str]):
        self.program = program
        self.calls = 0
        self.prompts: list[str] = []

    def __call__(self, prompt: str) -> str:
        self.calls += 1
        self.prompts.append(prompt)
        return self.program(prompt)


class CountingTransport:
    """Injectable chat-completions transport that records every request."""

    def __init__(self, reply: Callable[[dict], str] | str = "ok"):
        self.reply = reply
        self.requests: list[dict] = []

    def __call__(self, url, payload, headers, timeout):
        self.requests.append(payload)
        text = self.reply(payload) if callable(self.reply) else self.reply
        return 200, {
            "choices": [{"message": {"role": "assistant", "content": text}}],
            "usage": {"completion_tokens": len(text.split())},
        }


def pipeline_program(
    category: str = "TA",
    questions: tuple[str, ...] = ("How many jumps are completed?",),
    relevant_segments: Mapping[int, tuple[int, ...]] = None,
    respond_text: str = "Count so far: ${n}",
) -> Callable[[str], str]:
    """A deterministic end-to-end program for the synthesis stages.

    ``relevant_segments`` maps 1-based question index to the 1-based
    segments where that question has evidence.
    """
    if relevant_segments is None:
        relevant_segments = {1: (2, 3)}
    counter = {"n": 0}

    def program(prompt: str) -> str:
        template_id = identify_prompt(prompt)
        if template_id == "classify":
            return category
        if template_id == "B1-question-generation":
            return "\n".join(f"Q{i}: {q}" for i, q in enumerate(questions, start=1))
        if template_id == "B2-relevance-annotation":
            match = re.search(r"Segment: .*#seg(\d+)", prompt)
            segment = int(match.group(1)) if match else 0
            lines = []
            for k in range(1, len(questions) + 1):
                if segment in relevant_segments.get(k, ()):
                    lines.append(f"- Question {k}: [Yes] - evidence in segment {segment}")
                else:
                    lines.append(f"- Question {k}: [No]")
            return "\n".join(lines)
        if template_id == "B3-question-selection":
            return json.dumps({"selected_question_idx": 1, "task_prompt": questions[0],
                               "reasoning": "most evidence"})
        if template_id == "B4-response-decision":
            counter["n"] += 1
            return json.dumps({
                "should_respond": True,
                "reason": "new evidence",
                "response": respond_text.replace("${n}", str(counter["n"])),
            })
        raise AssertionError(f"pipeline program got unexpected template {template_id}")

    return program


@pytest.fixture
def tmp_cache(tmp_path):
    from streamharness import DiskCache

    return DiskCache(tmp_path / "cache")

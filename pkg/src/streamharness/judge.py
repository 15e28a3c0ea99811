"""Judge prompt rendering, verdict parsing, and cached judge orchestration.

Judging is text-only: every rubric operates on transcripts, never on
frames. Each call is memoized in a content-addressed disk cache keyed by
(judge model id, rendered prompt), so a warmed cache replays a full run
with zero network traffic.
"""

from __future__ import annotations

import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from string import Template
from typing import Mapping, Optional, Union

from .backends import TextBackend
from .cache import DiskCache, content_key
from .errors import BackendError, TemplateError
from .scoring import VerdictBundle
from .timeline import StreamTimeline, Subtask, TaskMode, Trajectory, response_turns

TEMPLATE_IDS = (
    "C1-accuracy",
    "C2-repetition",
    "C3-crr-intention",
    "C4-ssr-rec-intention",
    "C5-far-crr",
    "C6-far-ssr",
    "C7-far-rec",
    "B1-question-generation",
    "B2-relevance-annotation",
    "B3-question-selection",
    "B4-response-decision",
)

#: Score values each consistency rubric may emit; parsed numbers snap to
#: the nearest member (ties break toward the lower value).
RUBRIC_SCORES: dict[str, tuple[float, ...]] = {
    "C5-far-crr": (0.0, 0.3, 0.5),
    "C6-far-ssr": (0.0, 0.2, 0.5),
    "C7-far-rec": (0.0, 0.3, 0.5),
}

#: How many non-silent turns the repetition-judge context keeps.
REPETITION_CONTEXT_TURNS = 20


def load_template(template_id: str) -> str:
    if template_id not in TEMPLATE_IDS:
        raise TemplateError(f"unknown template id: {template_id!r}")
    path = resources.files("streamharness") / "prompts" / f"{template_id}.txt"
    return path.read_text(encoding="utf-8")


def render_prompt(template_id: str, slots: Mapping[str, object]) -> str:
    """Deterministic, byte-stable rendering of a template with its slots."""
    template = Template(load_template(template_id))
    try:
        return template.substitute({k: str(v) for k, v in slots.items()})
    except KeyError as exc:
        raise TemplateError(
            f"template {template_id!r} is missing slot {exc.args[0]!r}"
        ) from None


@dataclass(frozen=True)
class JudgeVerdict:
    kind: str  # correctness | repetition | intention | consistency
    value: Union[bool, float, None]
    raw_text: str
    parse_status: str  # ok | failed
    reasoning: str = ""

    @property
    def ok(self) -> bool:
        return self.parse_status == "ok"


def _failed(kind: str, raw_text: str) -> JudgeVerdict:
    return JudgeVerdict(kind=kind, value=None, raw_text=raw_text, parse_status="failed")


def _first_json_object(text: str) -> Optional[dict]:
    """Extract the first well-formed JSON object, tolerant to surrounding prose."""
    decoder = json.JSONDecoder()
    for start in range(len(text)):
        if text[start] != "{":
            continue
        try:
            obj, _ = decoder.raw_decode(text[start:])
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            return obj
    return None


_YES_NO = re.compile(r"\b(yes|no)\b", re.IGNORECASE)
_NUMBER = re.compile(r"-?\d+(?:\.\d+)?")


def parse_verdict(template_id: str, raw_text: str) -> JudgeVerdict:
    """Total parser: every byte string maps to a verdict or parse-failed."""
    if template_id == "C1-accuracy":
        obj = _first_json_object(raw_text)
        if obj is None or not isinstance(obj.get("correct"), bool):
            return _failed("correctness", raw_text)
        return JudgeVerdict(
            kind="correctness",
            value=obj["correct"],
            raw_text=raw_text,
            parse_status="ok",
            reasoning=str(obj.get("reasoning", "")),
        )
    if template_id == "C2-repetition":
        obj = _first_json_object(raw_text)
        if obj is None or not isinstance(obj.get("is_repeated"), bool):
            return _failed("repetition", raw_text)
        return JudgeVerdict(
            kind="repetition",
            value=obj["is_repeated"],
            raw_text=raw_text,
            parse_status="ok",
            reasoning=str(obj.get("reasoning", "")),
        )
    if template_id in ("C3-crr-intention", "C4-ssr-rec-intention"):
        match = _YES_NO.search(raw_text)
        if match is None:
            return _failed("intention", raw_text)
        return JudgeVerdict(
            kind="intention",
            value=match.group(1).lower() == "yes",
            raw_text=raw_text,
            parse_status="ok",
        )
    if template_id in RUBRIC_SCORES:
        match = _NUMBER.search(raw_text)
        if match is None:
            return _failed("consistency", raw_text)
        parsed = float(match.group(0))
        rubric = RUBRIC_SCORES[template_id]
        snapped = min(rubric, key=lambda v: (abs(v - parsed), v))
        return JudgeVerdict(
            kind="consistency", value=snapped, raw_text=raw_text, parse_status="ok"
        )
    raise TemplateError(f"no verdict parser for template {template_id!r}")


class JudgeClient:
    """Renders rubrics, calls the judge backend, parses and caches verdicts.

    Parse failures trigger one fresh re-request before the verdict is
    recorded as failed; transport failures map to a failed verdict so
    downstream scoring degrades conservatively instead of aborting.
    """

    def __init__(
        self,
        backend: TextBackend,
        cache: DiskCache,
        parse_retries: int = 1,
        concurrency: int = 8,
    ):
        self.backend = backend
        self.cache = cache
        self.parse_retries = parse_retries
        self.concurrency = max(1, concurrency)

    def judge(self, template_id: str, slots: Mapping[str, object]) -> JudgeVerdict:
        prompt = render_prompt(template_id, slots)
        key = content_key(self.backend.model_id, prompt)
        record = self.cache.get(key)
        if record is not None:
            return parse_verdict(template_id, record["raw_text"])

        raw = ""
        for _ in range(self.parse_retries + 1):
            try:
                raw = self.backend.complete_text(prompt)
            except BackendError:
                # Not cached: a rerun should get the chance to retry.
                return _failed(_kind_for(template_id), "")
            verdict = parse_verdict(template_id, raw)
            if verdict.ok:
                break
        self.cache.put(key, {"model_id": self.backend.model_id, "raw_text": raw})
        return parse_verdict(template_id, raw)


def _kind_for(template_id: str) -> str:
    return {
        "C1-accuracy": "correctness",
        "C2-repetition": "repetition",
        "C3-crr-intention": "intention",
        "C4-ssr-rec-intention": "intention",
    }.get(template_id, "consistency")


# -- per-sample judging protocol -------------------------------------------


def _latest_query(timeline: StreamTimeline, turn: int) -> str:
    """The query in force at a turn: latest issued at or before it."""
    issued = [t for t in timeline.queries if t <= turn]
    if issued:
        return timeline.queries[max(issued)]
    if timeline.queries:
        return timeline.queries[min(timeline.queries)]
    return ""


def repetition_context(timeline: StreamTimeline, traj: Trajectory) -> str:
    """Truncated dialogue over the sample's non-silent turns."""
    lines: list[str] = []
    for t, action in enumerate(traj.turns, start=1):
        if not action.is_respond:
            continue
        query = timeline.query_at(t)
        if query is not None:
            lines.append(f"User (turn {t}): {query}")
        lines.append(f"Model (turn {t}): {action.text}")
    return "\n".join(lines[-2 * REPETITION_CONTEXT_TURNS:])


def _eligible_pairs(timeline: StreamTimeline, traj: Trajectory) -> list[tuple[int, int]]:
    gt = timeline.ground_truth
    return [
        (t_star, t)
        for t_star in sorted(gt.gt_timestamps)
        for t in response_turns(traj)
        if abs(t - t_star) <= gt.delta
    ]


def judge_sample(
    timeline: StreamTimeline,
    traj: Trajectory,
    client: JudgeClient,
    double_far_scores: bool = True,
) -> VerdictBundle:
    """Issue every judge call a sample needs and assemble a complete bundle.

    Perception/tracing samples get one accuracy verdict per eligible
    (gt_turn, response_turn) pair plus one repetition verdict. Forward-
    active samples gate each in-window response turn on an intention
    judge, then score intention-passing turns with the matching
    consistency rubric. Raw forward-active rubric scores live in
    [0, 0.5] and are doubled into [0, 1] unless ``double_far_scores``
    is disabled. Failures map to conservative values (0 / not-repeated /
    no intention); the bundle is always complete for scoring.
    """
    gt = timeline.ground_truth
    pairs = _eligible_pairs(timeline, traj)

    if gt.mode is not TaskMode.FORWARD_ACTIVE:
        quality = _judge_accuracy_pairs(timeline, traj, client, pairs)
        repetition = False
        if response_turns(traj):
            ref = gt.references[min(gt.gt_timestamps)]
            verdict = client.judge("C2-repetition", {
                "context_text": repetition_context(timeline, traj),
                "ground_truth": ref.text,
            })
            repetition = bool(verdict.value) if verdict.ok else False
        return VerdictBundle(quality=quality, repetition=repetition)

    return _judge_forward_active(timeline, traj, client, pairs, double_far_scores)


def _parallel(client: JudgeClient, calls: list[tuple[str, dict]]) -> list[JudgeVerdict]:
    if len(calls) <= 1:
        return [client.judge(tid, slots) for tid, slots in calls]
    with ThreadPoolExecutor(max_workers=min(client.concurrency, len(calls))) as pool:
        return list(pool.map(lambda c: client.judge(c[0], c[1]), calls))


def _judge_accuracy_pairs(
    timeline: StreamTimeline,
    traj: Trajectory,
    client: JudgeClient,
    pairs: list[tuple[int, int]],
) -> dict[tuple[int, int], float]:
    gt = timeline.ground_truth
    calls = []
    for t_star, t in pairs:
        ref = gt.references[t_star]
        calls.append(("C1-accuracy", {
            "task_name": gt.subtask.value,
            "task": gt.mode.value,
            "question": _latest_query(timeline, t_star),
            "options": "; ".join(gt.options) if gt.options else "N/A",
            "ground_truth": ref.text,
            "model_answer": traj.action_at(t).text or "",
        }))
    verdicts = _parallel(client, calls)
    return {
        pair: (1.0 if (v.ok and v.value) else 0.0)
        for pair, v in zip(pairs, verdicts)
    }


def _judge_forward_active(
    timeline: StreamTimeline,
    traj: Trajectory,
    client: JudgeClient,
    pairs: list[tuple[int, int]],
    double_far_scores: bool,
) -> VerdictBundle:
    gt = timeline.ground_truth
    gated_turns = sorted({t for _, t in pairs})

    intention_template = (
        "C3-crr-intention" if gt.subtask is Subtask.CRR else "C4-ssr-rec-intention"
    )
    intention_calls = []
    for t in gated_turns:
        slots = {"content": traj.action_at(t).text or ""}
        if intention_template == "C3-crr-intention":
            slots["question"] = _latest_query(timeline, t)
        intention_calls.append((intention_template, slots))
    intention_verdicts = _parallel(client, intention_calls)
    intention_ok = {
        t: bool(v.value) if v.ok else False
        for t, v in zip(gated_turns, intention_verdicts)
    }

    scored_pairs = [(t_star, t) for t_star, t in pairs if intention_ok[t]]
    consistency_calls = []
    for t_star, t in scored_pairs:
        ref = gt.references[t_star]
        prediction = traj.action_at(t).text or ""
        if gt.subtask is Subtask.CRR:
            consistency_calls.append(("C5-far-crr", {
                "question": _latest_query(timeline, t_star),
                "answer": ref.text,
                "prediction": prediction,
            }))
        elif gt.subtask is Subtask.SSR:
            consistency_calls.append(("C6-far-ssr", {
                "reference": ref.expected_stage or ref.text,
                "prediction": prediction,
            }))
        else:  # REC
            consistency_calls.append(("C7-far-rec", {
                "activity": ref.text,
                "expected_count": ref.expected_count if ref.expected_count is not None else "",
                "prediction": prediction,
            }))
    consistency_verdicts = _parallel(client, consistency_calls)

    quality: dict[tuple[int, int], float] = {pair: 0.0 for pair in pairs}
    for pair, verdict in zip(scored_pairs, consistency_verdicts):
        raw = float(verdict.value) if (verdict.ok and verdict.value is not None) else 0.0
        quality[pair] = min(1.0, 2.0 * raw) if double_far_scores else raw
    return VerdictBundle(quality=quality, repetition=False)

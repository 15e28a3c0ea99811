"""Self-evolved trajectory synthesis pipeline.

Five stages turn a raw video pool into silent/respond training
conversations: (1) task-category classification, (2) self-questioning,
(3) segment-level relevance annotation, (4) causal roll-out of the
relevance matrix into turn actions, (5) standardization and export.
The same backend plays every role; all calls can be routed through the
shared content-addressed cache, which makes iteration resumption
deterministic.
"""

from __future__ import annotations

import json
import math
import random
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from statistics import mean
from typing import Callable, Mapping, Optional, Sequence

from .backends import TextBackend
from .cache import content_key
from .errors import BackendError, InvalidInputError
from .judge import _first_json_object, render_prompt
from .timeline import SILENT_MARKER

#: Uniform segment length in seconds; S = ceil(duration / SEGMENT_SECONDS).
SEGMENT_SECONDS = 30.0

#: Causal caption window: the decision prompt at segment t sees evidence
#: notes from at most this many of the most recent annotated segments <= t.
CAPTION_WINDOW = 40


class TaskCategory(str, Enum):
    IMMEDIATE_VISUAL = "IV"
    MEMORY_DEPENDENT = "MD"
    TEMPORAL_AGGREGATION = "TA"
    ANTICIPATORY_MONITORING = "AM"
    DYNAMIC_EVENT_DESCRIPTION = "DED"


_CATEGORY_ALIASES = {
    "iv": TaskCategory.IMMEDIATE_VISUAL,
    "immediate visual": TaskCategory.IMMEDIATE_VISUAL,
    "md": TaskCategory.MEMORY_DEPENDENT,
    "memory-dependent": TaskCategory.MEMORY_DEPENDENT,
    "memory dependent": TaskCategory.MEMORY_DEPENDENT,
    "ta": TaskCategory.TEMPORAL_AGGREGATION,
    "temporal aggregation": TaskCategory.TEMPORAL_AGGREGATION,
    "am": TaskCategory.ANTICIPATORY_MONITORING,
    "anticipatory monitoring": TaskCategory.ANTICIPATORY_MONITORING,
    "ded": TaskCategory.DYNAMIC_EVENT_DESCRIPTION,
    "dynamic event description": TaskCategory.DYNAMIC_EVENT_DESCRIPTION,
}

#: Per-category slot fills for the question-generation prompt.
CATEGORY_QUESTION_SKILL = {
    TaskCategory.IMMEDIATE_VISUAL: "immediate visual perception",
    TaskCategory.MEMORY_DEPENDENT: "event memory and recall",
    TaskCategory.TEMPORAL_AGGREGATION: "counting repeated actions",
    TaskCategory.ANTICIPATORY_MONITORING: "anticipating reveals and hidden targets",
    TaskCategory.DYNAMIC_EVENT_DESCRIPTION: "describing unfolding procedures",
}

CATEGORY_QUESTION_INSTRUCTION = {
    TaskCategory.IMMEDIATE_VISUAL: (
        "Generate diverse questions about specific visual details at the beginning, "
        "middle, and end of the video, including objects, people, actions, colors, "
        "text, numbers, counts, positions, and states."
    ),
    TaskCategory.MEMORY_DEPENDENT: (
        "Generate recall questions that test memory of earlier events from the "
        "perspective of later timestamps, using cues such as 'Earlier', 'Remember', "
        "'At the beginning', 'Before', or 'Previously'."
    ),
    TaskCategory.TEMPORAL_AGGREGATION: (
        "Generate counting questions about distinct, countable repetitive actions "
        "with clear boundaries, such as jumps, claps, steps, taps, cuts, or object "
        "placements."
    ),
    TaskCategory.ANTICIPATORY_MONITORING: (
        "Generate questions about hidden targets or future reveals, where an action, "
        "gaze, reach, opening, reaction, or camera motion creates a setup and later "
        "frames reveal the answer."
    ),
    TaskCategory.DYNAMIC_EVENT_DESCRIPTION: (
        "Generate questions about sequential steps, procedures, or multi-step "
        "workflows, emphasizing what happens and in what order."
    ),
}

#: Per-category slot fills for the relevance-annotation prompt.
CATEGORY_ANNOTATION_TARGET = {
    TaskCategory.IMMEDIATE_VISUAL: (
        "Output whether the requested attribute is clearly visible; if yes, provide "
        "the exact evidence and best-view time window."
    ),
    TaskCategory.MEMORY_DEPENDENT: (
        "Output whether this segment depicts the earlier origin event requested by "
        "the recall question; if yes, log the event and timestamp."
    ),
    TaskCategory.TEMPORAL_AGGREGATION: (
        "Distinguish complete repetitions from partial repetitions; report completed "
        "cycle counts, timing, and partial-start or partial-end notes."
    ),
    TaskCategory.ANTICIPATORY_MONITORING: (
        "Classify the segment as Setup, Reveal, Post-Reveal, or N/A; the reveal is "
        "the first moment when the answer becomes visually verifiable."
    ),
    TaskCategory.DYNAMIC_EVENT_DESCRIPTION: (
        "Determine whether the segment shows execution of the queried procedural "
        "step; if yes, report the micro-action, phase, and timing."
    ),
}

#: Per-category slot fills for the roll-out decision prompt.
CATEGORY_RESPONSE_RULE = {
    TaskCategory.IMMEDIATE_VISUAL: (
        "Answer only when clear visual evidence exists in the current window."
    ),
    TaskCategory.MEMORY_DEPENDENT: (
        "Answer only when clear visual evidence exists in the current window; recall "
        "questions must refer to earlier events at least roughly one minute in the past."
    ),
    TaskCategory.TEMPORAL_AGGREGATION: (
        "Respond when one or more new repetitions are completed, maintaining the "
        "running count from the last response."
    ),
    TaskCategory.ANTICIPATORY_MONITORING: (
        "Respond when new visual evidence significantly changes the current "
        "understanding, progressing from ambiguity to hypothesis to confirmation."
    ),
    TaskCategory.DYNAMIC_EVENT_DESCRIPTION: (
        "Respond on step transitions or meaningful progress within a step; avoid "
        "updates when the same step continues without new information."
    ),
}


@dataclass(frozen=True)
class Video:
    """An opaque video reference plus the metadata segmentation needs."""

    video_id: str
    duration_seconds: float
    segment_refs: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        if self.duration_seconds <= 0:
            raise InvalidInputError("duration_seconds must be positive")

    @property
    def segment_count(self) -> int:
        return max(1, math.ceil(self.duration_seconds / SEGMENT_SECONDS))

    def segment_ref(self, index: int) -> str:
        """1-based segment reference."""
        if self.segment_refs is not None:
            return self.segment_refs[index - 1]
        return f"{self.video_id}#seg{index}"

    def segment_time_range(self, index: int) -> str:
        start = (index - 1) * SEGMENT_SECONDS
        end = min(index * SEGMENT_SECONDS, self.duration_seconds)
        return f"{start:.0f}s-{end:.0f}s"


@dataclass(frozen=True)
class RelevanceMatrix:
    """Binary segment x question relevance grid with per-cell evidence notes."""

    relevant: tuple[tuple[bool, ...], ...]  # [segment][question]
    evidence: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        if not self.relevant or not self.relevant[0]:
            raise InvalidInputError("relevance matrix must be non-empty")
        widths = {len(row) for row in self.relevant}
        if len(widths) != 1:
            raise InvalidInputError("ragged relevance matrix")
        if len(self.evidence) != len(self.relevant):
            raise InvalidInputError("evidence and relevance shapes differ")

    @property
    def segments(self) -> int:
        return len(self.relevant)

    @property
    def questions(self) -> int:
        return len(self.relevant[0])

    def column_relevant_count(self, k: int) -> int:
        """0-based question column."""
        return sum(1 for row in self.relevant if row[k])

    def surviving_columns(self) -> list[int]:
        return [k for k in range(self.questions) if self.column_relevant_count(k) > 0]

    def restrict_columns(self, columns: Sequence[int]) -> "RelevanceMatrix":
        return RelevanceMatrix(
            relevant=tuple(tuple(row[k] for k in columns) for row in self.relevant),
            evidence=tuple(tuple(row[k] for k in columns) for row in self.evidence),
        )


@dataclass(frozen=True)
class ConversationTurn:
    segment_refs: tuple[str, ...]
    assistant: str
    user: Optional[str] = None
    evidence_relevant: bool = False

    def to_json(self) -> dict:
        out: dict = {
            "segment_refs": list(self.segment_refs),
            "assistant": self.assistant,
            "evidence_relevant": self.evidence_relevant,
        }
        if self.user is not None:
            out["user"] = self.user
        return out

    @staticmethod
    def from_json(obj: dict) -> "ConversationTurn":
        return ConversationTurn(
            segment_refs=tuple(obj["segment_refs"]),
            assistant=obj["assistant"],
            user=obj.get("user"),
            evidence_relevant=obj.get("evidence_relevant", False),
        )


@dataclass(frozen=True)
class TrainingConversation:
    video_id: str
    category: TaskCategory
    question_index: int  # 1-based index among surviving questions
    question: str
    turns: tuple[ConversationTurn, ...]
    provenance: Mapping[str, object] = field(default_factory=dict)

    def action_signature(self) -> tuple[str, ...]:
        return tuple("S" if t.assistant == SILENT_MARKER else "R" for t in self.turns)

    def to_json(self) -> dict:
        return {
            "video_id": self.video_id,
            "category": self.category.value,
            "question_index": self.question_index,
            "question": self.question,
            "turns": [t.to_json() for t in self.turns],
            "provenance": dict(self.provenance),
        }

    @staticmethod
    def from_json(obj: dict) -> "TrainingConversation":
        return TrainingConversation(
            video_id=obj["video_id"],
            category=TaskCategory(obj["category"]),
            question_index=obj["question_index"],
            question=obj["question"],
            turns=tuple(ConversationTurn.from_json(t) for t in obj["turns"]),
            provenance=obj.get("provenance", {}),
        )


# -- stage 1: task-category classification ----------------------------------

_CLASSIFY_PROMPT = """\
You are assigning a streaming task category to a video.
Video: {video_id} (duration {duration:.0f} seconds).
Choose exactly one category:
- Immediate Visual (IV): respond as soon as evidence is visible; moment-specific details.
- Memory-Dependent (MD): recall a past event from already-observed history.
- Temporal Aggregation (TA): aggregate evidence across segments, e.g. counting repetitions.
- Anticipatory Monitoring (AM): stay silent until a triggering cue appears, then respond.
- Dynamic Event Description (DED): continuously describe an unfolding procedure with spaced updates.
Reply with the category name or its code, nothing else.
"""


def parse_category(reply: str) -> Optional[TaskCategory]:
    lowered = reply.lower()
    # Longest aliases first so e.g. "temporal aggregation" wins over "ta".
    for alias in sorted(_CATEGORY_ALIASES, key=len, reverse=True):
        if re.search(rf"\b{re.escape(alias)}\b", lowered):
            return _CATEGORY_ALIASES[alias]
    return None


def classify_video(video: Video, backend: TextBackend) -> Optional[TaskCategory]:
    """Assign one of the five categories; None means the video is skipped."""
    prompt = _CLASSIFY_PROMPT.format(video_id=video.video_id, duration=video.duration_seconds)
    for _ in range(2):
        category = parse_category(backend.complete_text(prompt))
        if category is not None:
            return category
    return None


# -- stage 2: self-questioning ----------------------------------------------

_QUESTION_LINE = re.compile(r"^\s*Q(\d+)\s*[:.]\s*(.+?)\s*$", re.MULTILINE)


def generate_questions(
    video: Video,
    category: TaskCategory,
    backend: TextBackend,
    max_questions: int = 5,
) -> list[str]:
    """Parse Q<n>: lines, order-preserving, case-insensitively deduplicated."""
    prompt = render_prompt("B1-question-generation", {
        "task_skill": CATEGORY_QUESTION_SKILL[category],
        "task_instruction": CATEGORY_QUESTION_INSTRUCTION[category],
    })
    reply = backend.complete_text(f"{prompt}\nVideo: {video.video_id}")
    questions: list[str] = []
    seen: set[str] = set()
    for match in _QUESTION_LINE.finditer(reply):
        text = match.group(2).strip()
        folded = text.casefold()
        if folded not in seen:
            seen.add(folded)
            questions.append(text)
        if len(questions) >= max_questions:
            break
    return questions


# -- stage 3: segment-level relevance annotation -----------------------------

_RELEVANCE_LINE = re.compile(
    r"^\s*-?\s*Question\s+(\d+)\s*:\s*\[?\s*"
    r"(post[- ]?reveal|setup|reveal|yes|no|n/?a|none)"
    r"\s*\]?\s*(?:[-:]\s*(.*))?$",
    re.MULTILINE | re.IGNORECASE,
)

_RELEVANT_VALUES = {"yes", "setup", "reveal", "post-reveal", "postreveal", "post reveal"}
_IRRELEVANT_VALUES = {"no", "n/a", "na", "none"}


def _parse_relevance_reply(reply: str, question_count: int) -> Optional[tuple[list[bool], list[str]]]:
    relevant = [False] * question_count
    evidence = [""] * question_count
    matched = False
    for match in _RELEVANCE_LINE.finditer(reply):
        k = int(match.group(1))
        if not 1 <= k <= question_count:
            continue
        value = match.group(2).strip().lower()
        note = (match.group(3) or "").strip()
        if value in _RELEVANT_VALUES:
            relevant[k - 1] = True
            evidence[k - 1] = note
            matched = True
        elif value in _IRRELEVANT_VALUES:
            matched = True
    return (relevant, evidence) if matched else None


def questions_block(questions: Sequence[str]) -> str:
    return "\n".join(f"Q{i}: {q}" for i, q in enumerate(questions, start=1))


def annotate_relevance(
    video: Video,
    questions: Sequence[str],
    category: TaskCategory,
    backend: TextBackend,
) -> tuple[RelevanceMatrix, list[dict]]:
    """One backend call per segment; unparseable replies default the row
    to all-Irrelevant and emit a warning record."""
    if not questions:
        raise InvalidInputError("need at least one question to annotate")
    warnings: list[dict] = []
    rows_rel: list[tuple[bool, ...]] = []
    rows_ev: list[tuple[str, ...]] = []
    for t in range(1, video.segment_count + 1):
        prompt = render_prompt("B2-relevance-annotation", {
            "time_range": video.segment_time_range(t),
            "questions_text": questions_block(questions),
            "annotation_target": CATEGORY_ANNOTATION_TARGET[category],
        })
        reply = backend.complete_text(f"{prompt}\nSegment: {video.segment_ref(t)}")
        parsed = _parse_relevance_reply(reply, len(questions))
        if parsed is None:
            warnings.append({"video_id": video.video_id, "segment": t,
                             "warning": "unparseable relevance reply; row set to all-Irrelevant"})
            parsed = ([False] * len(questions), [""] * len(questions))
        rows_rel.append(tuple(parsed[0]))
        rows_ev.append(tuple(parsed[1]))
    return RelevanceMatrix(relevant=tuple(rows_rel), evidence=tuple(rows_ev)), warnings


# -- stage 3b: question selection --------------------------------------------


def _fallback_selection(matrix: RelevanceMatrix) -> int:
    """Most relevant cells wins; ties break to the lowest index (1-based)."""
    counts = [matrix.column_relevant_count(k) for k in range(matrix.questions)]
    return max(range(matrix.questions), key=lambda k: (counts[k], -k)) + 1


def select_question(
    category: TaskCategory,
    questions: Sequence[str],
    matrix: RelevanceMatrix,
    backend: TextBackend,
    sample_segments: int = 5,
) -> tuple[int, str]:
    """Pick the tracked question; returns (1-based index, tracking prompt)."""
    if len(questions) != matrix.questions or not questions:
        raise InvalidInputError("questions and matrix width differ")
    captions = []
    for t in range(min(sample_segments, matrix.segments)):
        notes = [f"Q{k + 1}: {note}" for k, note in enumerate(matrix.evidence[t]) if note]
        captions.append(f"Segment {t + 1}: " + ("; ".join(notes) if notes else "no evidence"))
    prompt = render_prompt("B3-question-selection", {
        "task_type": category.value,
        "questions_text": questions_block(questions),
        "sample_captions": "\n".join(captions),
    })
    reply = backend.complete_text(prompt)
    obj = _first_json_object(reply)
    if obj is not None:
        idx = obj.get("selected_question_idx")
        if isinstance(idx, int) and 1 <= idx <= len(questions):
            return idx, str(obj.get("task_prompt", questions[idx - 1]))
    idx = _fallback_selection(matrix)
    return idx, questions[idx - 1]


# -- stage 4: causal roll-out -------------------------------------------------


def rollout(
    video: Video,
    category: TaskCategory,
    questions: Sequence[str],
    matrix: RelevanceMatrix,
    tracked_index: int,
    backend: TextBackend,
    provenance: Optional[Mapping[str, object]] = None,
    caption_window: int = CAPTION_WINDOW,
) -> TrainingConversation:
    """Convert the relevance matrix into a causal silent/respond conversation.

    Segments whose row is all-Irrelevant emit the silent marker without a
    backend call. Decision prompts see only captions from segments <= t
    (capped at the most recent ``caption_window``), never the future.
    A malformed decision reply falls back to silence.
    """
    if not 1 <= tracked_index <= matrix.questions:
        raise InvalidInputError(f"tracked question index out of range: {tracked_index}")
    question = questions[tracked_index - 1]
    query_turn = None
    if category in (TaskCategory.IMMEDIATE_VISUAL, TaskCategory.MEMORY_DEPENDENT):
        for t in range(matrix.segments):
            if matrix.relevant[t][tracked_index - 1]:
                query_turn = t + 1
                break

    turns: list[ConversationTurn] = []
    captions: list[str] = []
    history: list[str] = []
    last_response = ""
    for t in range(1, matrix.segments + 1):
        row = matrix.relevant[t - 1]
        note = matrix.evidence[t - 1][tracked_index - 1]
        if note:
            captions.append(f"[{video.segment_time_range(t)}] Q{tracked_index}: {note}")
        user = question if t == query_turn else None
        if not any(row):
            turns.append(ConversationTurn(
                segment_refs=(video.segment_ref(t),),
                assistant=SILENT_MARKER,
                user=user,
                evidence_relevant=False,
            ))
            history.append(f"Turn {t}: {SILENT_MARKER}")
            continue

        prompt = render_prompt("B4-response-decision", {
            "task_type": category.value,
            "question_number": tracked_index,
            "question_text": question,
            "timestamp": video.segment_time_range(t),
            "captions": "\n".join(captions[-caption_window:]) or "(none)",
            "last_response": last_response or "(none)",
            "history": "\n".join(history) or "(none)",
            "response_rule": CATEGORY_RESPONSE_RULE[category],
        })
        reply = backend.complete_text(prompt)
        decision = _first_json_object(reply)
        respond = bool(decision and decision.get("should_respond") is True)
        response_text = str(decision.get("response", "")).strip() if decision else ""
        if respond and response_text:
            assistant = response_text
            last_response = response_text
        else:
            assistant = SILENT_MARKER
        turns.append(ConversationTurn(
            segment_refs=(video.segment_ref(t),),
            assistant=assistant,
            user=user,
            evidence_relevant=True,
        ))
        history.append(f"Turn {t}: {assistant}")

    return TrainingConversation(
        video_id=video.video_id,
        category=category,
        question_index=tracked_index,
        question=question,
        turns=tuple(turns),
        provenance=dict(provenance or {}),
    )


# -- stage 5: standardization and export --------------------------------------


def validity_filter(conversations: Sequence[TrainingConversation]) -> tuple[
    list[TrainingConversation], list[dict]
]:
    """Drop malformed, contradiction, and duplicate conversations."""
    kept: list[TrainingConversation] = []
    dropped: list[dict] = []
    seen_signatures: set[tuple] = set()
    for conv in conversations:
        if not conv.turns:
            dropped.append({"video_id": conv.video_id, "reason": "empty"})
            continue
        if all(t.assistant == SILENT_MARKER for t in conv.turns):
            # A tracked question survives only with relevant evidence, so
            # a fully silent conversation contradicts its own matrix.
            dropped.append({"video_id": conv.video_id, "reason": "all-silent"})
            continue
        signature = (conv.video_id, conv.question.casefold(), conv.action_signature())
        if signature in seen_signatures:
            dropped.append({"video_id": conv.video_id, "reason": "duplicate"})
            continue
        seen_signatures.add(signature)
        kept.append(conv)
    return kept, dropped


def _duration_bucket(turn_count: int) -> str:
    minutes = turn_count * SEGMENT_SECONDS / 60.0
    low = int(minutes)
    return f"{low}-{low + 1}min"


def standardize_and_export(
    conversations: Sequence[TrainingConversation],
    dataset_path: str | Path,
    questions_per_video: Optional[Mapping[str, int]] = None,
) -> tuple[list[TrainingConversation], dict]:
    """Filter, write the dataset JSONL, and return (kept, stats)."""
    if not conversations:
        raise InvalidInputError("no conversations to export")
    kept, dropped = validity_filter(conversations)
    dataset_path = Path(dataset_path)
    dataset_path.parent.mkdir(parents=True, exist_ok=True)
    tmp = dataset_path.with_suffix(dataset_path.suffix + ".tmp")
    try:
        with open(tmp, "w", encoding="utf-8") as fh:
            for conv in kept:
                fh.write(json.dumps(conv.to_json(), ensure_ascii=False, sort_keys=True) + "\n")
        tmp.replace(dataset_path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise

    histogram: dict[str, int] = {}
    durations: dict[str, int] = {}
    for conv in kept:
        histogram[conv.category.value] = histogram.get(conv.category.value, 0) + 1
        bucket = _duration_bucket(len(conv.turns))
        durations[bucket] = durations.get(bucket, 0) + 1
    stats = {
        "record_count": len(kept),
        "dropped": dropped,
        "category_histogram": histogram,
        "duration_histogram": durations,
        "mean_questions_per_video": (
            mean(questions_per_video.values()) if questions_per_video else None
        ),
    }
    return kept, stats


def load_dataset(path: str | Path) -> list[TrainingConversation]:
    with open(path, encoding="utf-8") as fh:
        return [TrainingConversation.from_json(json.loads(line)) for line in fh if line.strip()]


# -- orchestration -------------------------------------------------------------


@dataclass
class VideoResult:
    video_id: str
    status: str  # ok | skipped
    reason: str = ""
    conversation: Optional[TrainingConversation] = None
    question_count: int = 0
    warnings: list[dict] = field(default_factory=list)


def synthesize_video(
    video: Video,
    backend: TextBackend,
    max_questions: int = 5,
    iteration: int = 0,
) -> VideoResult:
    """Run stages 1-4 for one video."""
    try:
        category = classify_video(video, backend)
    except BackendError as exc:
        return VideoResult(video.video_id, "skipped", f"classification failed: {exc}")
    if category is None:
        return VideoResult(video.video_id, "skipped", "unparseable category")

    questions = generate_questions(video, category, backend, max_questions)
    if not questions:
        return VideoResult(video.video_id, "skipped", "no questions parsed")

    matrix, warnings = annotate_relevance(video, questions, category, backend)
    surviving = matrix.surviving_columns()
    if not surviving:
        return VideoResult(video.video_id, "skipped", "no question has relevant evidence",
                           question_count=len(questions), warnings=warnings)
    kept_questions = [questions[k] for k in surviving]
    kept_matrix = matrix.restrict_columns(surviving)

    tracked, _prompt = select_question(category, kept_questions, kept_matrix, backend)
    conversation = rollout(
        video, category, kept_questions, kept_matrix, tracked, backend,
        provenance={"backend_id": backend.model_id, "iteration": iteration},
    )
    return VideoResult(
        video.video_id, "ok",
        conversation=conversation,
        question_count=len(kept_questions),
        warnings=warnings,
    )


def _dataset_content_hash(path: Path) -> str:
    return content_key(path.read_text(encoding="utf-8"))


@dataclass(frozen=True)
class HandoffManifest:
    iteration: int
    dataset_path: str
    record_count: int
    content_hash: str

    def to_json(self) -> dict:
        return {
            "iteration": self.iteration,
            "dataset_path": self.dataset_path,
            "record_count": self.record_count,
            "content_hash": self.content_hash,
        }

    @staticmethod
    def load(path: str | Path) -> "HandoffManifest":
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
        return HandoffManifest(
            iteration=obj["iteration"],
            dataset_path=obj["dataset_path"],
            record_count=obj["record_count"],
            content_hash=obj["content_hash"],
        )


def run_iteration(
    videos: Sequence[Video],
    backend: TextBackend,
    out_dir: str | Path,
    iteration: int = 0,
    max_questions: int = 5,
) -> tuple[HandoffManifest, dict]:
    """Stages 1-5 for one outer iteration; writes dataset, stats, manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = [synthesize_video(v, backend, max_questions, iteration) for v in videos]
    conversations = [r.conversation for r in results if r.conversation is not None]
    if not conversations:
        raise InvalidInputError("every video was skipped; nothing to export")
    questions_per_video = {r.video_id: r.question_count for r in results if r.status == "ok"}

    dataset_path = out_dir / f"dataset_{iteration}.jsonl"
    kept, stats = standardize_and_export(conversations, dataset_path, questions_per_video)
    stats["skipped"] = [
        {"video_id": r.video_id, "reason": r.reason} for r in results if r.status == "skipped"
    ]
    with open(out_dir / f"stats_{iteration}.json", "w", encoding="utf-8") as fh:
        json.dump(stats, fh, ensure_ascii=False, indent=2, sort_keys=True)

    manifest = HandoffManifest(
        iteration=iteration,
        dataset_path=str(dataset_path),
        record_count=len(kept),
        content_hash=_dataset_content_hash(dataset_path),
    )
    with open(out_dir / f"manifest_{iteration}.json", "w", encoding="utf-8") as fh:
        json.dump(manifest.to_json(), fh, ensure_ascii=False, indent=2, sort_keys=True)
    return manifest, stats


def iterate(
    videos: Sequence[Video],
    backend_for_iteration: Callable[[int], Optional[TextBackend]],
    iterations: int,
    out_dir: str | Path,
    start_iteration: int = 0,
    max_questions: int = 5,
) -> list[HandoffManifest]:
    """Outer self-evolution loop, minus the external fine-tuning hook.

    Runs stages 1-5 per iteration. When the backend for the next
    iteration (the externally adapted model) is not yet available, the
    loop pauses cleanly after writing the handoff manifest; a later call
    with ``start_iteration`` set from that manifest resumes.
    """
    manifests: list[HandoffManifest] = []
    for i in range(start_iteration, iterations):
        backend = backend_for_iteration(i)
        if backend is None:
            break  # clean pause: resume from the last written manifest
        manifest, _stats = run_iteration(videos, backend, out_dir, i, max_questions)
        manifests.append(manifest)
    return manifests


# -- audit ----------------------------------------------------------------------

AUDIT_DIMENSIONS = (
    "task_type_consistency",
    "question_answerability",
    "temporal_relevance_quality",
    "trajectory_consistency",
    "sample_validity",
)


@dataclass(frozen=True)
class AuditReport:
    sample_size: int
    pass_rates: Mapping[str, Optional[float]]
    flagged: Mapping[str, tuple[str, ...]]

    def to_json(self) -> dict:
        return {
            "sample_size": self.sample_size,
            "pass_rates": dict(self.pass_rates),
            "flagged": {k: list(v) for k, v in self.flagged.items()},
        }


def trajectory_consistent(conv: TrainingConversation) -> bool:
    """Mechanical check: every no-evidence turn must be the silent marker,
    and every responding turn must have had relevant evidence."""
    for turn in conv.turns:
        if not turn.evidence_relevant and turn.assistant != SILENT_MARKER:
            return False
    return True


def _yes_no_probe(backend: TextBackend, prompt: str) -> bool:
    reply = backend.complete_text(prompt)
    match = re.search(r"\b(yes|no)\b", reply, re.IGNORECASE)
    return bool(match and match.group(1).lower() == "yes")


def audit(
    dataset: Sequence[TrainingConversation],
    n: int,
    seed: int = 0,
    judge_backend: Optional[TextBackend] = None,
) -> AuditReport:
    """Per-dimension pass rates over a sampled subset.

    Trajectory consistency and sample validity are computed mechanically;
    the three judgment-based dimensions run only when a judge backend is
    supplied (otherwise reported as None).
    """
    if n > len(dataset):
        raise InvalidInputError(f"audit sample {n} exceeds dataset size {len(dataset)}")
    rng = random.Random(seed)
    sample = rng.sample(list(dataset), n)

    flagged: dict[str, list[str]] = {dim: [] for dim in AUDIT_DIMENSIONS}
    consistent = 0
    for conv in sample:
        if trajectory_consistent(conv):
            consistent += 1
        else:
            flagged["trajectory_consistency"].append(conv.video_id)

    kept, _dropped = validity_filter(sample)
    kept_ids = {id(c) for c in kept}
    valid = sum(1 for c in sample if id(c) in kept_ids)
    for conv in sample:
        if id(conv) not in kept_ids:
            flagged["sample_validity"].append(conv.video_id)

    rates: dict[str, Optional[float]] = {
        "trajectory_consistency": consistent / n,
        "sample_validity": valid / n,
        "task_type_consistency": None,
        "question_answerability": None,
        "temporal_relevance_quality": None,
    }

    if judge_backend is not None:
        type_ok = answerable = relevant = 0
        for conv in sample:
            if _yes_no_probe(judge_backend, (
                f"Task category: {conv.category.value}. Question: {conv.question}\n"
                "Does the question match the assigned temporal category? "
                'Respond with ONLY "yes" or "no".'
            )):
                type_ok += 1
            else:
                flagged["task_type_consistency"].append(conv.video_id)
            if _yes_no_probe(judge_backend, (
                f"Question: {conv.question}\n"
                "Can this question be answered from visual evidence in a video rather "
                'than outside knowledge? Respond with ONLY "yes" or "no".'
            )):
                answerable += 1
            else:
                flagged["question_answerability"].append(conv.video_id)
            evidence_turns = [t for t in conv.turns if t.evidence_relevant]
            probe_text = "; ".join(t.assistant for t in evidence_turns[:5])
            if _yes_no_probe(judge_backend, (
                f"Question: {conv.question}\nResponses at evidence turns: {probe_text}\n"
                "Do the evidence-labelled turns plausibly contain the evidence needed "
                'to answer the question? Respond with ONLY "yes" or "no".'
            )):
                relevant += 1
            else:
                flagged["temporal_relevance_quality"].append(conv.video_id)
        rates["task_type_consistency"] = type_ok / n
        rates["question_answerability"] = answerable / n
        rates["temporal_relevance_quality"] = relevant / n

    return AuditReport(
        sample_size=n,
        pass_rates=rates,
        flagged={k: tuple(v) for k, v in flagged.items()},
    )

"""Domain types for streams, queries, actions, and trajectories.

One turn corresponds to one frame at the configured frame rate (default
0.5 fps, i.e. a two-second logical interval per turn). Turn indices are
the universal time unit everywhere in the harness; wall-clock time is
metadata only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Optional

from .errors import InvalidInputError, ValidationError

FORMAT_VERSION = 1

#: Canonical marker a backend emits to decline responding this turn.
SILENT_MARKER = "<silent>"

#: Default matching-window tolerance (in turns) for forward-active samples
#: whose ground truth omits an explicit value.
DEFAULT_FORWARD_DELTA = 5


class TaskMode(str, Enum):
    REAL_TIME_PERCEPTION = "RealTimePerception"
    BACKWARD_TRACING = "BackwardTracing"
    FORWARD_ACTIVE = "ForwardActive"


class Subtask(str, Enum):
    OCR = "OCR"
    ACR = "ACR"
    ATR = "ATR"
    STU = "STU"
    FPD = "FPD"
    OJR = "OJR"
    EPM = "EPM"
    ASI = "ASI"
    HLD = "HLD"
    REC = "REC"
    SSR = "SSR"
    CRR = "CRR"


#: Which subtasks belong to which mode (drives report layout).
MODE_SUBTASKS: dict[TaskMode, tuple[Subtask, ...]] = {
    TaskMode.REAL_TIME_PERCEPTION: (
        Subtask.OCR, Subtask.ACR, Subtask.ATR, Subtask.STU, Subtask.FPD, Subtask.OJR,
    ),
    TaskMode.BACKWARD_TRACING: (Subtask.EPM, Subtask.ASI, Subtask.HLD),
    TaskMode.FORWARD_ACTIVE: (Subtask.REC, Subtask.SSR, Subtask.CRR),
}

SUBTASK_MODE: dict[Subtask, TaskMode] = {
    sub: mode for mode, subs in MODE_SUBTASKS.items() for sub in subs
}


def normalize_response_text(text: Optional[str]) -> Optional[str]:
    """Map raw backend output to a response string or None (silence).

    Whitespace-only output and the literal silent marker (case-insensitive)
    both normalize to silence; anything else is kept verbatim (trimmed).
    """
    if text is None:
        return None
    stripped = text.strip()
    if not stripped or stripped.lower() == SILENT_MARKER:
        return None
    return stripped


def default_token_count(text: str) -> int:
    """Whitespace-token fallback when the backend reports no usage."""
    return len(text.split())


@dataclass(frozen=True)
class Action:
    """One turn-level decision: remain silent or respond with text."""

    text: Optional[str] = None
    completion_tokens: int = 0

    def __post_init__(self):
        if self.text is not None and not self.text.strip():
            raise ValidationError("Respond action requires non-empty text")
        if self.completion_tokens < 0:
            raise ValidationError("completion_tokens must be nonnegative")

    @property
    def is_respond(self) -> bool:
        return self.text is not None

    @property
    def kind(self) -> str:
        return "respond" if self.is_respond else "silent"

    @staticmethod
    def silent(completion_tokens: int = 0) -> "Action":
        return Action(text=None, completion_tokens=completion_tokens)

    @staticmethod
    def respond(text: str, completion_tokens: Optional[int] = None) -> "Action":
        if completion_tokens is None:
            completion_tokens = default_token_count(text)
        return Action(text=text, completion_tokens=completion_tokens)

    @staticmethod
    def from_raw(text: Optional[str], completion_tokens: Optional[int] = None) -> "Action":
        """Build an action from raw backend output, applying normalization."""
        normalized = normalize_response_text(text)
        if normalized is None:
            return Action.silent(completion_tokens or 0)
        return Action.respond(normalized, completion_tokens)


@dataclass(frozen=True)
class ReferenceAnswer:
    """Ground-truth reference at one response timestamp.

    ``expected_count`` applies to repetition-counting samples and
    ``expected_stage`` to stage-recognition samples; both are optional.
    """

    text: str
    expected_count: Optional[int] = None
    expected_stage: Optional[str] = None

    def to_json(self) -> dict:
        out: dict = {"text": self.text}
        if self.expected_count is not None:
            out["expected_count"] = self.expected_count
        if self.expected_stage is not None:
            out["expected_stage"] = self.expected_stage
        return out

    @staticmethod
    def from_json(obj) -> "ReferenceAnswer":
        if isinstance(obj, str):
            return ReferenceAnswer(text=obj)
        return ReferenceAnswer(
            text=obj["text"],
            expected_count=obj.get("expected_count"),
            expected_stage=obj.get("expected_stage"),
        )


@dataclass(frozen=True)
class GroundTruthSpec:
    mode: TaskMode
    subtask: Subtask
    gt_timestamps: frozenset[int]
    references: Mapping[int, ReferenceAnswer]
    delta: int = 0
    options: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        if not self.gt_timestamps:
            raise ValidationError("gt_timestamps must be nonempty")
        if self.delta < 0:
            raise ValidationError("delta must be nonnegative")
        if self.mode is not TaskMode.FORWARD_ACTIVE and self.delta != 0:
            raise ValidationError(f"delta must be 0 for {self.mode.value} samples")
        missing = sorted(set(self.gt_timestamps) - set(self.references))
        if missing:
            raise ValidationError(f"gt timestamps without a reference: {missing}")
        if SUBTASK_MODE[self.subtask] is not self.mode:
            raise ValidationError(
                f"subtask {self.subtask.value} does not belong to mode {self.mode.value}"
            )

    def to_json(self) -> dict:
        out = {
            "mode": self.mode.value,
            "subtask": self.subtask.value,
            "gt_timestamps": sorted(self.gt_timestamps),
            "references": {str(t): ref.to_json() for t, ref in sorted(self.references.items())},
            "delta": self.delta,
        }
        if self.options is not None:
            out["options"] = list(self.options)
        return out

    @staticmethod
    def from_json(obj: dict) -> "GroundTruthSpec":
        return GroundTruthSpec(
            mode=TaskMode(obj["mode"]),
            subtask=Subtask(obj["subtask"]),
            gt_timestamps=frozenset(obj["gt_timestamps"]),
            references={int(t): ReferenceAnswer.from_json(r) for t, r in obj["references"].items()},
            delta=obj.get("delta", 0),
            options=tuple(obj["options"]) if obj.get("options") is not None else None,
        )


@dataclass(frozen=True)
class StreamTimeline:
    """Per-sample schedule: frame cadence, query injections, ground truth."""

    sample_id: str
    turn_count: int
    ground_truth: GroundTruthSpec
    queries: Mapping[int, str] = field(default_factory=dict)
    fps: float = 0.5

    def __post_init__(self):
        if self.turn_count < 1:
            raise ValidationError("turn_count must be >= 1")
        if self.fps <= 0:
            raise ValidationError("fps must be positive")
        bad = [t for t in self.queries if not 1 <= t <= self.turn_count]
        if bad:
            raise ValidationError(f"query turn indices out of range [1, T]: {sorted(bad)}")
        bad_gt = [t for t in self.ground_truth.gt_timestamps if not 1 <= t <= self.turn_count]
        if bad_gt:
            raise ValidationError(f"gt timestamps out of range [1, T]: {sorted(bad_gt)}")

    def query_at(self, turn: int) -> Optional[str]:
        return self.queries.get(turn)

    def to_json(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "sample_id": self.sample_id,
            "fps": self.fps,
            "turn_count": self.turn_count,
            "queries": {str(t): q for t, q in sorted(self.queries.items())},
            "ground_truth": self.ground_truth.to_json(),
        }

    @staticmethod
    def from_json(obj: dict) -> "StreamTimeline":
        version = obj.get("format_version")
        if version != FORMAT_VERSION:
            raise ValidationError(f"unsupported timeline format_version: {version!r}")
        return StreamTimeline(
            sample_id=obj["sample_id"],
            turn_count=obj["turn_count"],
            ground_truth=GroundTruthSpec.from_json(obj["ground_truth"]),
            queries={int(t): q for t, q in obj.get("queries", {}).items()},
            fps=obj.get("fps", 0.5),
        )

    @staticmethod
    def load(path: str | Path) -> "StreamTimeline":
        with open(path, encoding="utf-8") as fh:
            return StreamTimeline.from_json(json.load(fh))

    def dump(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, ensure_ascii=False, indent=2)
            fh.write("\n")


@dataclass(frozen=True)
class Trajectory:
    """The model's causal action sequence: one action per turn."""

    sample_id: str
    turns: tuple[Action, ...]

    def __post_init__(self):
        if not self.turns:
            raise ValidationError("trajectory must have at least one turn")

    def __len__(self) -> int:
        return len(self.turns)

    def action_at(self, turn: int) -> Action:
        """1-based turn lookup."""
        return self.turns[turn - 1]


def answer_rate(traj: Trajectory) -> Fraction:
    """Fraction of turns at which the model responds, as an exact rational."""
    if len(traj) < 1:
        raise InvalidInputError("empty trajectory")
    return Fraction(sum(1 for a in traj.turns if a.is_respond), len(traj))


def response_turns(traj: Trajectory) -> tuple[int, ...]:
    """Sorted 1-based indices of responding turns."""
    return tuple(t for t, a in enumerate(traj.turns, start=1) if a.is_respond)


@dataclass(frozen=True)
class AlignmentViolation:
    kind: str
    turn: Optional[int] = None
    detail: str = ""


def validate_alignment(timeline: StreamTimeline, traj: Trajectory) -> list[AlignmentViolation]:
    """Check a trajectory against its timeline; violations are data, not exceptions."""
    violations: list[AlignmentViolation] = []
    if len(traj) != timeline.turn_count:
        violations.append(AlignmentViolation(
            kind="length",
            detail=f"trajectory has {len(traj)} turns, timeline declares {timeline.turn_count}",
        ))
    if traj.sample_id != timeline.sample_id:
        violations.append(AlignmentViolation(
            kind="sample-id",
            detail=f"trajectory {traj.sample_id!r} vs timeline {timeline.sample_id!r}",
        ))
    for t, action in enumerate(traj.turns, start=1):
        if action.is_respond and not action.text.strip():
            violations.append(AlignmentViolation(kind="empty-response", turn=t))
    return violations


# -- trajectory JSONL ----------------------------------------------------

def trajectory_to_records(timeline: StreamTimeline, traj: Trajectory) -> list[dict]:
    """One JSON record per turn, suitable for a JSON-Lines log."""
    records = []
    for t, action in enumerate(traj.turns, start=1):
        rec: dict = {
            "format_version": FORMAT_VERSION,
            "sample_id": traj.sample_id,
            "turn": t,
            "action": action.kind,
            "completion_tokens": action.completion_tokens,
        }
        query = timeline.query_at(t)
        if query is not None:
            rec["query"] = query
        if action.is_respond:
            rec["text"] = action.text
        records.append(rec)
    return records


def write_trajectory_jsonl(path: str | Path, timeline: StreamTimeline, traj: Trajectory) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in trajectory_to_records(timeline, traj):
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def trajectories_from_records(records: Iterable[dict]) -> dict[str, Trajectory]:
    """Group turn records by sample_id and rebuild trajectories.

    Records for one sample must cover turns 1..T with no gaps.
    """
    by_sample: dict[str, dict[int, Action]] = {}
    for rec in records:
        version = rec.get("format_version")
        if version != FORMAT_VERSION:
            raise ValidationError(f"unsupported trajectory format_version: {version!r}")
        sample_id = rec["sample_id"]
        turn = rec["turn"]
        if rec["action"] == "respond":
            action = Action(text=rec["text"], completion_tokens=rec.get("completion_tokens", 0))
        else:
            action = Action.silent(rec.get("completion_tokens", 0))
        turns = by_sample.setdefault(sample_id, {})
        if turn in turns:
            raise ValidationError(f"duplicate turn {turn} for sample {sample_id!r}")
        turns[turn] = action

    out: dict[str, Trajectory] = {}
    for sample_id, turns in by_sample.items():
        expected = set(range(1, max(turns) + 1))
        missing = sorted(expected - set(turns))
        if missing:
            raise ValidationError(f"sample {sample_id!r} missing turns: {missing}")
        out[sample_id] = Trajectory(
            sample_id=sample_id,
            turns=tuple(turns[t] for t in sorted(turns)),
        )
    return out


def read_trajectories_jsonl(path: str | Path) -> dict[str, Trajectory]:
    with open(path, encoding="utf-8") as fh:
        records = [json.loads(line) for line in fh if line.strip()]
    return trajectories_from_records(records)

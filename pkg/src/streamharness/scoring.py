"""Sample scoring: quality x verbosity multiplier - premature penalty.

The final sample score is

    S = max(0, quality * M - P_early)

where ``quality`` averages, over ground-truth timestamps, the best judge
value among responses inside the matching window; ``M`` is the verbosity
multiplier (a stepwise decay in the answer rate for forward-active
samples, a repetition halving otherwise); and ``P_early`` deducts a flat
0.1 for responding before any evidence window opens (forward-active
only). The raw formula can go negative when quality * M < P_early, so the
score is floored at 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from statistics import mean
from typing import Mapping, Optional, Sequence

from .errors import (
    IncompleteVerdictsError,
    InvalidInputError,
    ModeMismatchError,
)
from .timeline import (
    MODE_SUBTASKS,
    StreamTimeline,
    Subtask,
    TaskMode,
    Trajectory,
    answer_rate,
    response_turns,
)

#: Flat deduction for a premature response on forward-active samples.
PREMATURE_PENALTY = 0.1

#: Multiplier when a repetition verdict fires (perception/tracing regime).
REPETITION_MULTIPLIER = 0.5

# Guards the step-function floor against binary representation of the
# answer rate (e.g. 5 * 0.6 evaluating just under 3.0).
_FLOOR_EPS = 1e-9


@dataclass(frozen=True)
class MatchDetail:
    """Per-ground-truth-timestamp matching outcome."""

    gt_turn: int
    matched_turn: Optional[int]
    judge_value: float


@dataclass(frozen=True)
class SampleScore:
    sample_id: str
    subtask: Subtask
    quality: float
    r_ans: float
    multiplier: float
    premature: bool
    premature_penalty: float
    final: float
    matches: tuple[MatchDetail, ...] = ()

    def to_json(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "subtask": self.subtask.value,
            "quality": self.quality,
            "r_ans": self.r_ans,
            "multiplier": self.multiplier,
            "premature": self.premature,
            "premature_penalty": self.premature_penalty,
            "final": self.final,
            "matches": [
                {"gt_turn": m.gt_turn, "matched_turn": m.matched_turn, "judge_value": m.judge_value}
                for m in self.matches
            ],
        }


@dataclass(frozen=True)
class VerdictBundle:
    """Everything scoring needs from the judging stage.

    ``quality`` maps (gt_turn, response_turn) pairs to judge values in
    [0, 1]. Every eligible pair (response within the matching window)
    must be present. ``repetition`` is the per-sample repetition verdict
    for perception/tracing samples.
    """

    quality: Mapping[tuple[int, int], float] = field(default_factory=dict)
    repetition: bool = False


def far_multiplier(r_ans: float) -> float:
    """Stepwise verbosity multiplier for forward-active samples.

    1.0 below an answer rate of 0.4, then a 0.2-per-step decay with a
    floor of 0.2. Non-increasing; range is exactly {1.0, 0.8, 0.6, 0.4, 0.2}.
    """
    r = float(r_ans)
    if not 0.0 <= r <= 1.0:
        raise InvalidInputError(f"answer rate must be in [0, 1], got {r_ans!r}")
    if r < 0.4:
        return 1.0
    steps = math.floor(5.0 * r + _FLOOR_EPS)
    # Integer arithmetic before the single division keeps each plateau at
    # the exact float of its decimal literal (1.0 - 0.2 * 3 != 0.4).
    return max(10 - 2 * steps, 2) / 10.0


def repetition_multiplier(mode: TaskMode, repetition_verdict: bool) -> float:
    """0.5 when the same answer was emitted across consecutive turns."""
    if mode is TaskMode.FORWARD_ACTIVE:
        raise ModeMismatchError("repetition multiplier does not apply to forward-active samples")
    return REPETITION_MULTIPLIER if repetition_verdict else 1.0


def _eligible_pairs(timeline: StreamTimeline, traj: Trajectory) -> dict[int, list[int]]:
    gt = timeline.ground_truth
    responses = response_turns(traj)
    return {
        t_star: [t for t in responses if abs(t - t_star) <= gt.delta]
        for t_star in sorted(gt.gt_timestamps)
    }


def quality_term(
    timeline: StreamTimeline,
    traj: Trajectory,
    verdicts: Mapping[tuple[int, int], float],
) -> float:
    """Mean over ground-truth timestamps of the best in-window judge value.

    A timestamp with no response inside its window contributes 0 (the
    max-over-empty-set convention).
    """
    return _quality_with_matches(timeline, traj, verdicts)[0]


def _quality_with_matches(
    timeline: StreamTimeline,
    traj: Trajectory,
    verdicts: Mapping[tuple[int, int], float],
) -> tuple[float, tuple[MatchDetail, ...]]:
    eligible = _eligible_pairs(timeline, traj)
    details: list[MatchDetail] = []
    total = 0.0
    for t_star, turns in eligible.items():
        best_value = 0.0
        best_turn: Optional[int] = None
        for t in turns:
            if (t_star, t) not in verdicts:
                raise IncompleteVerdictsError(t_star, t)
            value = verdicts[(t_star, t)]
            if not 0.0 <= value <= 1.0:
                raise InvalidInputError(
                    f"judge value for pair ({t_star}, {t}) out of [0, 1]: {value!r}"
                )
            if best_turn is None or value > best_value:
                best_value = value
                best_turn = t
        details.append(MatchDetail(gt_turn=t_star, matched_turn=best_turn, judge_value=best_value))
        total += best_value
    return total / len(eligible), tuple(details)


def premature_penalty(timeline: StreamTimeline, traj: Trajectory) -> float:
    """0.1 iff a forward-active sample responded before the first window opens."""
    gt = timeline.ground_truth
    if gt.mode is not TaskMode.FORWARD_ACTIVE:
        return 0.0
    earliest_window = min(gt.gt_timestamps) - gt.delta
    if any(t < earliest_window for t in response_turns(traj)):
        return PREMATURE_PENALTY
    return 0.0


def score_sample(
    timeline: StreamTimeline,
    traj: Trajectory,
    verdicts: VerdictBundle,
) -> SampleScore:
    """Compose quality, verbosity multiplier, and premature penalty."""
    gt = timeline.ground_truth
    quality, matches = _quality_with_matches(timeline, traj, verdicts.quality)
    r_ans = answer_rate(traj)

    if gt.mode is TaskMode.FORWARD_ACTIVE:
        multiplier = far_multiplier(float(r_ans))
        penalty = premature_penalty(timeline, traj)
    else:
        multiplier = repetition_multiplier(gt.mode, verdicts.repetition)
        penalty = 0.0

    final = max(0.0, quality * multiplier - penalty)
    return SampleScore(
        sample_id=traj.sample_id,
        subtask=gt.subtask,
        quality=quality,
        r_ans=float(r_ans),
        multiplier=multiplier,
        premature=penalty > 0.0,
        premature_penalty=penalty,
        final=final,
        matches=matches,
    )


# -- benchmark aggregation -------------------------------------------------

@dataclass(frozen=True)
class BenchmarkReport:
    subtask_means: Mapping[Subtask, float]       # percentage scale (x100)
    mode_means: Mapping[TaskMode, float]
    overall: float
    avg_tokens_per_turn: float
    per_token_score: Optional[float]
    sample_count: int

    def to_json(self) -> dict:
        return {
            "subtask_means": {s.value: v for s, v in self.subtask_means.items()},
            "mode_means": {m.value: v for m, v in self.mode_means.items()},
            "overall": self.overall,
            "avg_tokens_per_turn": self.avg_tokens_per_turn,
            "per_token_score": self.per_token_score,
            "sample_count": self.sample_count,
        }


def aggregate(
    scores: Sequence[tuple[Subtask, SampleScore]],
    total_completion_tokens: int = 0,
    total_turns: int = 0,
) -> BenchmarkReport:
    """Fold per-sample scores into the benchmark report.

    Subtask means are on the x100 percentage scale; mode averages are
    unweighted means of their subtask means, and the overall average is
    the unweighted mean over all subtask means present. Token totals
    include silent turns (an always-generating backend still pays for
    its marker tokens).
    """
    if not scores:
        raise InvalidInputError("no scores to aggregate")
    by_subtask: dict[Subtask, list[float]] = {}
    for subtask, score in scores:
        if not isinstance(subtask, Subtask):
            raise InvalidInputError(f"unknown subtask label: {subtask!r}")
        by_subtask.setdefault(subtask, []).append(score.final)

    subtask_means = {s: 100.0 * mean(vals) for s, vals in by_subtask.items()}
    mode_means = {}
    for mode, subs in MODE_SUBTASKS.items():
        present = [subtask_means[s] for s in subs if s in subtask_means]
        if present:
            mode_means[mode] = mean(present)
    overall = mean(subtask_means.values())

    avg_tokens = total_completion_tokens / total_turns if total_turns else 0.0
    eta = overall / avg_tokens if avg_tokens > 0 else None
    return BenchmarkReport(
        subtask_means=subtask_means,
        mode_means=mode_means,
        overall=overall,
        avg_tokens_per_turn=avg_tokens,
        per_token_score=eta,
        sample_count=len(scores),
    )

"""Run a full evaluation loop offline: sessions, judging, aggregation.

A scripted session backend stands in for the streaming model and a
scripted text backend stands in for the judge, so the whole loop runs
without any network access. The same wiring works against live HTTP
endpoints by swapping in HttpSessionBackend / HttpTextBackend.
"""

import json
import tempfile

from streamharness import (
    DiskCache,
    GroundTruthSpec,
    JudgeClient,
    ReferenceAnswer,
    ScriptedTextBackend,
    StreamTimeline,
    Subtask,
    TaskMode,
    aggregate,
    judge_sample,
    run_session,
    score_sample,
    scripted_backend,
)
from streamharness.cli import render_table
from streamharness.timeline import SUBTASK_MODE


def timeline_for(sample_id, subtask, query_turn, query):
    """An 8-turn sample with its ground truth at turn 4."""
    mode = SUBTASK_MODE[subtask]
    return StreamTimeline(
        sample_id=sample_id,
        turn_count=8,
        ground_truth=GroundTruthSpec(
            mode=mode,
            subtask=subtask,
            gt_timestamps=frozenset({4}),
            references={4: ReferenceAnswer("the reference answer")},
            delta=2 if mode is TaskMode.FORWARD_ACTIVE else 0,
        ),
        queries={query_turn: query},
    )


# Three samples, one per task family.
samples = [
    timeline_for("percept-1", Subtask.OCR, 1, "What does the sign say?"),
    timeline_for("trace-1", Subtask.EPM, 4, "What started the fire?"),
    timeline_for("active-1", Subtask.REC, 1, "Count the claps."),
]


# The "model": answers exactly at turn 4, silent otherwise. A session
# backend sees only frames 1..t, queries issued by t, and its own past
# actions; the driver enforces that causal horizon.
def play(turn, history):
    return "my answer at turn four" if turn == 4 else None


records = []
for timeline in samples:
    frames = [f"{timeline.sample_id}/frame-{t}" for t in range(1, timeline.turn_count + 1)]
    records.append(run_session(timeline, frames, scripted_backend(play)))


# The "judge": accepts everything. Real runs point this at a chat
# endpoint; verdicts are cached on disk either way, so re-running an
# evaluation replays judge calls without re-paying for them.
def judge_program(prompt):
    if "expert evaluator" in prompt:
        return json.dumps({"correct": True, "reasoning": "matches"})
    if "repetitive behavior" in prompt:
        return json.dumps({"is_repeated": False})
    if "Activity being counted" in prompt or "Expected" in prompt:
        return "Score: 0.5"  # top consistency grade, doubled to 1.0
    return "yes"  # intention gates


with tempfile.TemporaryDirectory() as cache_dir:
    judge = JudgeClient(
        ScriptedTextBackend(program=judge_program, model_id="demo-judge"),
        DiskCache(cache_dir),
    )

    scores, tokens, turns = [], 0, 0
    for record in records:
        bundle = judge_sample(record.timeline, record.trajectory, judge)
        scores.append((
            record.timeline.ground_truth.subtask,
            score_sample(record.timeline, record.trajectory, bundle),
        ))
        tokens += sum(a.completion_tokens for a in record.trajectory.turns)
        turns += len(record.trajectory)

    report = aggregate(scores, total_completion_tokens=tokens, total_turns=turns)

print(render_table(report))
print()
print(json.dumps(report.to_json(), indent=2, sort_keys=True))

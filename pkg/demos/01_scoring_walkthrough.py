"""Walk through the scoring rule on a single hand-built sample.

The final score composes three ingredients:

    score = max(0, quality * multiplier - premature_penalty)

* quality: for each ground-truth timestamp, take the best judge value
  among responses inside its matching window, then average.
* multiplier: a verbosity discount. Perception/tracing samples are
  halved if the judge finds the answer repeated; forward-active samples
  decay stepwise with the answer rate.
* premature penalty: forward-active samples lose a flat 0.1 if they
  respond before the first window opens.

Everything here is offline; judge values are supplied by hand so the
arithmetic is easy to follow.
"""

from streamharness import (
    GroundTruthSpec,
    ReferenceAnswer,
    StreamTimeline,
    Subtask,
    TaskMode,
    Trajectory,
    VerdictBundle,
    far_multiplier,
    score_sample,
)
from streamharness.timeline import Action

# A 12-turn forward-active sample: the model should report a repetition
# count once turns 7 and 10 come into view (delta = 2 on each side).
timeline = StreamTimeline(
    sample_id="demo-rec",
    turn_count=12,
    ground_truth=GroundTruthSpec(
        mode=TaskMode.FORWARD_ACTIVE,
        subtask=Subtask.REC,
        gt_timestamps=frozenset({7, 10}),
        references={
            7: ReferenceAnswer("three jumps so far", expected_count=3),
            10: ReferenceAnswer("five jumps so far", expected_count=5),
        },
        delta=2,
    ),
    queries={1: "Count the jumps as they happen."},
)

# The model speaks at turns 2 (too early!), 6, and 9.
trajectory = Trajectory(
    sample_id="demo-rec",
    turns=tuple(
        Action.respond(text, 4) if text else Action.silent()
        for text in [
            None, "one jump", None, None, None, "three jumps",
            None, None, "five jumps", None, None, None,
        ]
    ),
)

# Judge values for every (gt_turn, response_turn) pair inside a window.
# Turn 6 sits in the window of gt 7; turn 9 is in the windows of both.
verdicts = VerdictBundle(quality={
    (7, 6): 1.0,   # correct count at the time
    (7, 9): 0.6,   # five jumps answers gt 10 better than gt 7
    (10, 9): 1.0,
})

score = score_sample(timeline, trajectory, verdicts)

print("quality          ", score.quality)          # (1.0 + 1.0) / 2
print("answer rate      ", score.r_ans)            # 3 / 12
print("multiplier       ", score.multiplier)       # rate < 0.4 -> 1.0
print("premature penalty", score.premature_penalty)  # turn 2 < 7 - 2
print("final            ", score.final)            # 1.0 * 1.0 - 0.1

# The verbosity multiplier is a step function of the answer rate:
print()
print("answer rate -> multiplier")
for rate in (0.0, 0.2, 0.39, 0.4, 0.6, 0.8, 1.0):
    print(f"  {rate:>4} -> {far_multiplier(rate)}")

# Per-timestamp matching detail shows which response served which target.
print()
for match in score.matches:
    print(f"gt turn {match.gt_turn}: matched turn {match.matched_turn} "
          f"(judge value {match.judge_value})")

"""Synthesize silent/respond training conversations from a video pool.

The pipeline runs five stages per video: classify the task category,
generate candidate questions, annotate per-segment relevance, roll the
relevance matrix out into a causal conversation, and export the
standardized dataset. Here a scripted backend plays the annotator, so
the run is deterministic and offline; swapping in an HTTP backend (via
CachedTextBackend for resumability) is a one-line change.
"""

import json
import re
import tempfile

from streamharness import Video, audit, load_dataset, run_iteration
from streamharness.backends import ScriptedTextBackend

QUESTIONS = (
    "How many box jumps are completed?",
    "What color is the lifter's shirt?",
)

# Which segments carry evidence for each question (1-based).
EVIDENCE = {1: (2, 3, 5), 2: (1,)}


def annotator(prompt):
    """One deterministic program covers every pipeline role."""
    if "assigning a streaming task category" in prompt:
        return "Temporal Aggregation"
    if "expert video analyst" in prompt:
        return "\n".join(f"Q{i}: {q}" for i, q in enumerate(QUESTIONS, start=1))
    if "segment time range" in prompt:
        segment = int(re.search(r"#seg(\d+)", prompt).group(1))
        lines = []
        for k in range(1, len(QUESTIONS) + 1):
            if segment in EVIDENCE[k]:
                lines.append(f"- Question {k}: [Yes] - reps visible in segment {segment}")
            else:
                lines.append(f"- Question {k}: [No]")
        return "\n".join(lines)
    if "selecting the best question" in prompt:
        return json.dumps({"selected_question_idx": 1,
                           "task_prompt": QUESTIONS[0],
                           "reasoning": "counting evidence spans several segments"})
    if "decide whether to generate a response" in prompt:
        timestamp = re.search(r"current timestamp (\d+)s", prompt).group(1)
        return json.dumps({"should_respond": True,
                           "reason": "a new repetition completed",
                           "response": f"New reps completed by {timestamp}s."})
    raise RuntimeError("unexpected prompt")


videos = [
    Video("gym-clip-a", duration_seconds=150),   # 5 segments
    Video("gym-clip-b", duration_seconds=120),   # 4 segments
]

with tempfile.TemporaryDirectory() as out_dir:
    backend = ScriptedTextBackend(program=annotator, model_id="demo-synth")
    manifest, stats = run_iteration(videos, backend, out_dir, iteration=0)

    print("handoff manifest:")
    print(json.dumps(manifest.to_json(), indent=2))
    print()
    print("category histogram:", stats["category_histogram"])
    print("dropped:", stats["dropped"])

    dataset = load_dataset(manifest.dataset_path)
    conv = dataset[0]
    print()
    print(f"{conv.video_id} / {conv.category.value}: {conv.question}")
    for t, turn in enumerate(conv.turns, start=1):
        marker = "respond" if turn.assistant != "<silent>" else "silent "
        print(f"  turn {t} [{marker}] {turn.assistant}")

    # The audit re-checks the silent/respond structure mechanically:
    # every no-evidence turn must be silent, every record must survive
    # the validity filters.
    report = audit(dataset, n=len(dataset), seed=0)
    print()
    print("audit pass rates:", {
        k: v for k, v in report.pass_rates.items() if v is not None
    })

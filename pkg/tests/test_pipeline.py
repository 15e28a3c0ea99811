import json
import re

import pytest

from streamharness import (
    CachedTextBackend,
    DiskCache,
    ScriptedTextBackend,
    TaskCategory,
    TrainingConversation,
    Video,
    audit,
    classify_video,
    generate_questions,
    iterate,
    load_dataset,
    run_iteration,
    select_question,
    standardize_and_export,
    validity_filter,
)
from streamharness.errors import InvalidInputError
from streamharness.pipeline import (
    ConversationTurn,
    HandoffManifest,
    RelevanceMatrix,
    annotate_relevance,
    parse_category,
    rollout,
    trajectory_consistent,
)

from conftest import CallCounter, pipeline_program


def make_backend(program, model_id="synth-1"):
    return ScriptedTextBackend(program=program, model_id=model_id)


VIDEO = Video(video_id="vid-1", duration_seconds=150)  # 5 segments


# -- stage 1: classification -----------------------------------------------------

def test_parse_category_accepts_names_and_codes():
    assert parse_category("TA") is TaskCategory.TEMPORAL_AGGREGATION
    assert parse_category("This is Temporal Aggregation.") is TaskCategory.TEMPORAL_AGGREGATION
    assert parse_category("anticipatory monitoring") is TaskCategory.ANTICIPATORY_MONITORING
    assert parse_category("no category here") is None


def test_classify_video_retries_once_then_skips():
    replies = iter(["unintelligible", "DED"])
    backend = make_backend(lambda p: next(replies))
    assert classify_video(VIDEO, backend) is TaskCategory.DYNAMIC_EVENT_DESCRIPTION

    backend = make_backend(lambda p: "still nothing")
    assert classify_video(VIDEO, backend) is None


def test_video_segmentation():
    assert Video("v", 150).segment_count == 5
    assert Video("v", 151).segment_count == 6
    assert Video("v", 10).segment_count == 1
    assert Video("v", 150).segment_time_range(2) == "30s-60s"
    with pytest.raises(InvalidInputError):
        Video("v", 0)


# -- stage 2: questions ------------------------------------------------------------

def test_generate_questions_parses_dedups_and_caps():
    reply = "\n".join([
        "Q1: How many jumps?",
        "commentary line",
        "Q2: how many JUMPS?",  # case-insensitive duplicate
        "Q3: What color is the mat?",
        "Q4: Who enters last?",
        "Q5: What happens at the end?",
        "Q6: Over the cap?",
    ])
    backend = make_backend(lambda p: reply)
    questions = generate_questions(VIDEO, TaskCategory.TEMPORAL_AGGREGATION, backend,
                                   max_questions=4)
    assert questions == [
        "How many jumps?",
        "What color is the mat?",
        "Who enters last?",
        "What happens at the end?",
    ]


def test_generate_questions_empty_reply_gives_no_questions():
    backend = make_backend(lambda p: "no structured lines at all")
    assert generate_questions(VIDEO, TaskCategory.IMMEDIATE_VISUAL, backend) == []


# -- stage 3: relevance ---------------------------------------------------------------

def test_annotate_relevance_builds_matrix_and_flags_bad_rows():
    def program(prompt):
        match = re.search(r"#seg(\d+)", prompt)
        segment = int(match.group(1))
        if segment == 3:
            return "completely malformed"
        marker = "Yes" if segment == 2 else "No"
        return f"- Question 1: [{marker}] - saw it\n- Question 2: [No]"

    matrix, warnings = annotate_relevance(
        VIDEO, ["q one", "q two"], TaskCategory.IMMEDIATE_VISUAL, make_backend(program)
    )
    assert matrix.segments == 5 and matrix.questions == 2
    assert matrix.relevant[1] == (True, False)
    assert matrix.relevant[2] == (False, False)  # malformed row defaults
    assert [w["segment"] for w in warnings] == [3]
    assert matrix.surviving_columns() == [0]


def test_anticipatory_stage_labels_map_to_relevance():
    def program(prompt):
        segment = int(re.search(r"#seg(\d+)", prompt).group(1))
        label = {1: "Setup", 2: "Reveal", 3: "Post-Reveal", 4: "N/A", 5: "N/A"}[segment]
        return f"- Question 1: [{label}] - note"

    matrix, warnings = annotate_relevance(
        VIDEO, ["what is in the box?"], TaskCategory.ANTICIPATORY_MONITORING,
        make_backend(program),
    )
    assert warnings == []
    assert [row[0] for row in matrix.relevant] == [True, True, True, False, False]


def test_restrict_columns_drops_evidence_free_questions():
    matrix = RelevanceMatrix(
        relevant=((True, False), (False, False)),
        evidence=(("a", ""), ("", "")),
    )
    assert matrix.surviving_columns() == [0]
    restricted = matrix.restrict_columns([0])
    assert restricted.questions == 1
    assert restricted.relevant == ((True,), (False,))


# -- stage 3b: selection ------------------------------------------------------------

def _matrix(rows):
    return RelevanceMatrix(
        relevant=tuple(tuple(row) for row in rows),
        evidence=tuple(tuple("e" if cell else "" for cell in row) for row in rows),
    )


def test_select_question_honors_valid_json():
    backend = make_backend(
        lambda p: '{"selected_question_idx": 2, "task_prompt": "track Q2", "reasoning": "r"}'
    )
    idx, prompt = select_question(
        TaskCategory.TEMPORAL_AGGREGATION, ["q1", "q2"], _matrix([(True, True)]), backend
    )
    assert (idx, prompt) == (2, "track Q2")


def test_select_question_falls_back_to_max_relevance():
    backend = make_backend(lambda p: '{"selected_question_idx": 99}')
    rows = [(False, True), (True, True), (False, True)]
    idx, prompt = select_question(
        TaskCategory.TEMPORAL_AGGREGATION, ["q1", "q2"], _matrix(rows), backend
    )
    assert idx == 2 and prompt == "q2"

    # Tie on relevance count: lowest index wins.
    backend = make_backend(lambda p: "not json either")
    idx, _ = select_question(
        TaskCategory.TEMPORAL_AGGREGATION, ["q1", "q2"],
        _matrix([(True, True), (True, True)]), backend,
    )
    assert idx == 1


# -- stage 4: roll-out ----------------------------------------------------------------

def test_rollout_all_irrelevant_rows_are_silent_with_zero_calls():
    rows = [(False,), (True,), (False,), (True,), (False,)]
    counter = CallCounter(
        lambda p: json.dumps({"should_respond": True, "reason": "r", "response": "update"})
    )
    conv = rollout(
        VIDEO, TaskCategory.TEMPORAL_AGGREGATION, ["count?"], _matrix(rows), 1,
        make_backend(counter),
    )
    assert counter.calls == 2  # only the two evidence rows
    assert [t.assistant for t in conv.turns] == [
        "<silent>", "update", "<silent>", "update", "<silent>",
    ]
    assert [t.evidence_relevant for t in conv.turns] == [False, True, False, True, False]


def test_rollout_malformed_decision_falls_back_to_silence():
    rows = [(True,), (True,)]
    replies = iter(["not json at all", json.dumps({"should_respond": False, "reason": "wait"})])
    conv = rollout(
        Video("v2", 60), TaskCategory.DYNAMIC_EVENT_DESCRIPTION, ["steps?"],
        _matrix(rows), 1, make_backend(lambda p: next(replies)),
    )
    assert [t.assistant for t in conv.turns] == ["<silent>", "<silent>"]


def test_rollout_query_injected_at_first_relevant_segment_for_visual_tasks():
    rows = [(False,), (True,), (True,)]
    conv = rollout(
        Video("v3", 90), TaskCategory.IMMEDIATE_VISUAL, ["what color?"],
        _matrix(rows), 1,
        make_backend(lambda p: json.dumps(
            {"should_respond": True, "reason": "seen", "response": "red"})),
    )
    assert [t.user for t in conv.turns] == [None, "what color?", None]


def test_rollout_decision_prompts_are_causal():
    video = Video("v4", 300)  # 10 segments
    rows = [(True,) for _ in range(10)]
    matrix = RelevanceMatrix(
        relevant=tuple(rows),
        evidence=tuple((f"evidence-seg-{t}",) for t in range(1, 11)),
    )
    seen: list[tuple[int, str]] = []

    def program(prompt):
        timestamp = re.search(r"current timestamp (\d+)s-", prompt)
        seen.append((int(timestamp.group(1)) // 30 + 1, prompt))
        return json.dumps({"should_respond": False, "reason": "hold"})

    rollout(video, TaskCategory.ANTICIPATORY_MONITORING, ["when revealed?"],
            matrix, 1, make_backend(program))
    assert len(seen) == 10
    for turn, prompt in seen:
        for future in range(turn + 1, 11):
            assert f"evidence-seg-{future}" not in prompt
        assert f"evidence-seg-{turn}" in prompt


def test_rollout_caption_window_caps_history():
    segments = 50
    video = Video("v5", 30 * segments)
    matrix = RelevanceMatrix(
        relevant=tuple((True,) for _ in range(segments)),
        evidence=tuple((f"note-{t}",) for t in range(1, segments + 1)),
    )
    prompts: list[str] = []

    def program(prompt):
        prompts.append(prompt)
        return json.dumps({"should_respond": False, "reason": "hold"})

    rollout(video, TaskCategory.TEMPORAL_AGGREGATION, ["count?"], matrix, 1,
            make_backend(program))
    last = prompts[-1]
    assert "note-50" in last and "note-11" in last
    assert "note-10]" not in last and re.search(r"\bnote-1\b", last) is None


# -- stage 5: export ---------------------------------------------------------------------

def _conv(video_id="v", question="q?", signature=("S", "R"), category=TaskCategory.TEMPORAL_AGGREGATION):
    turns = tuple(
        ConversationTurn(
            segment_refs=(f"{video_id}#seg{i}",),
            assistant="<silent>" if kind == "S" else f"resp {i}",
            evidence_relevant=(kind == "R"),
        )
        for i, kind in enumerate(signature, start=1)
    )
    return TrainingConversation(
        video_id=video_id, category=category, question_index=1,
        question=question, turns=turns,
    )


def test_validity_filter_drops_all_silent_and_duplicates():
    good = _conv("v1")
    silent = _conv("v2", signature=("S", "S"))
    duplicate = _conv("v1")
    kept, dropped = validity_filter([good, silent, duplicate])
    assert kept == [good]
    assert sorted(d["reason"] for d in dropped) == ["all-silent", "duplicate"]


def test_standardize_and_export_writes_jsonl_and_stats(tmp_path):
    convs = [_conv("v1"), _conv("v2", category=TaskCategory.IMMEDIATE_VISUAL)]
    path = tmp_path / "data.jsonl"
    kept, stats = standardize_and_export(convs, path, {"v1": 3, "v2": 5})
    assert len(kept) == 2
    assert stats["record_count"] == 2
    assert stats["category_histogram"] == {"TA": 1, "IV": 1}
    assert stats["mean_questions_per_video"] == 4.0
    assert load_dataset(path) == kept


# -- orchestration ---------------------------------------------------------------------

def test_run_iteration_is_deterministic_and_byte_identical(tmp_path):
    videos = [
        Video("vid-a", 150),
        Video("vid-b", 90),
        Video("vid-c", 120),
    ]

    def fresh_backend(cache_dir):
        return CachedTextBackend(
            make_backend(pipeline_program(
                category="TA",
                questions=("How many jumps?", "What color is the mat?"),
                relevant_segments={1: (2, 3), 2: (1,)},
            )),
            DiskCache(cache_dir),
        )

    manifest1, stats1 = run_iteration(videos, fresh_backend(tmp_path / "c1"),
                                      tmp_path / "run1", iteration=0)
    manifest2, stats2 = run_iteration(videos, fresh_backend(tmp_path / "c2"),
                                      tmp_path / "run2", iteration=0)
    bytes1 = (tmp_path / "run1" / "dataset_0.jsonl").read_bytes()
    bytes2 = (tmp_path / "run2" / "dataset_0.jsonl").read_bytes()
    assert bytes1 == bytes2
    assert manifest1.content_hash == manifest2.content_hash
    assert manifest1.record_count == stats1["record_count"] == stats2["record_count"]


def test_iterate_pauses_cleanly_when_next_backend_is_missing(tmp_path):
    videos = [Video("vid-a", 150)]
    backend = make_backend(pipeline_program())

    def provider(i):
        return backend if i == 0 else None  # iteration 1's model not yet trained

    manifests = iterate(videos, provider, iterations=3, out_dir=tmp_path)
    assert [m.iteration for m in manifests] == [0]
    loaded = HandoffManifest.load(tmp_path / "manifest_0.json")
    assert loaded == manifests[0]

    # Resume from the manifest once the next backend exists.
    resumed = iterate(videos, lambda i: backend, iterations=2, out_dir=tmp_path,
                      start_iteration=loaded.iteration + 1)
    assert [m.iteration for m in resumed] == [1]


def test_skipped_videos_are_recorded_not_fatal(tmp_path):
    ok_program = pipeline_program()

    def program(prompt):
        if "vid-bad" in prompt:
            return "no parseable output ever"
        return ok_program(prompt)

    _, stats = run_iteration(
        [Video("vid-good", 150), Video("vid-bad", 150)],
        make_backend(program), tmp_path, iteration=0,
    )
    assert [s["video_id"] for s in stats["skipped"]] == ["vid-bad"]
    assert stats["record_count"] == 1


# -- audit ------------------------------------------------------------------------------

def test_audit_mechanical_dimensions():
    clean = [_conv(f"v{i}") for i in range(4)]
    report = audit(clean, n=4, seed=1)
    assert report.pass_rates["trajectory_consistency"] == 1.0
    assert report.pass_rates["sample_validity"] == 1.0
    assert report.pass_rates["task_type_consistency"] is None

    # Corrupt one conversation: a response on a no-evidence turn.
    bad = TrainingConversation(
        video_id="vx", category=TaskCategory.TEMPORAL_AGGREGATION, question_index=1,
        question="q?", turns=(
            ConversationTurn(("vx#seg1",), "spurious response", evidence_relevant=False),
            ConversationTurn(("vx#seg2",), "resp", evidence_relevant=True),
        ),
    )
    assert not trajectory_consistent(bad)
    report = audit(clean + [bad], n=5, seed=1)
    assert report.pass_rates["trajectory_consistency"] == pytest.approx(0.8)
    assert "vx" in report.flagged["trajectory_consistency"]


def test_audit_judgment_dimensions_with_backend():
    convs = [_conv(f"v{i}", question=f"How many reps in v{i}?") for i in range(3)]
    judge = make_backend(lambda p: "yes")
    report = audit(convs, n=3, seed=2, judge_backend=judge)
    assert report.pass_rates["task_type_consistency"] == 1.0
    assert report.pass_rates["question_answerability"] == 1.0
    assert report.pass_rates["temporal_relevance_quality"] == 1.0


def test_audit_rejects_oversized_sample():
    with pytest.raises(InvalidInputError):
        audit([_conv("v1")], n=5)

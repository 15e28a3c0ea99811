"""streamharness: streaming dialogue evaluation and trajectory synthesis.

The package drives frame-level multi-turn sessions against pluggable
model backends under a causal constraint, scores them with a
correctness x timing x verbosity protocol, synthesizes silent/respond
training trajectories from unlabeled video pools, and ships the
closed-form analysis tools (per-token score, rank correlation,
noise-corrected loss, sample budgets) used to sanity-check both.
"""

from .analysis import (
    NoiseModel,
    corrected_loss,
    effective_samples,
    per_token_score,
    sample_budget,
    spearman,
)
from .backends import (
    CachedTextBackend,
    ChatCompletionsClient,
    ChatReply,
    HttpTextBackend,
    ScriptedTextBackend,
    TextBackend,
    frame_message,
    text_message,
)
from .cache import DiskCache, content_key
from .config import JudgeConfig, RunConfig, load_config
from .errors import (
    BackendError,
    ConfigError,
    ContextOverflowError,
    IncompleteVerdictsError,
    InvalidInputError,
    ModeMismatchError,
    StreamHarnessError,
    TemplateError,
    ValidationError,
)
from .judge import (
    JudgeClient,
    JudgeVerdict,
    judge_sample,
    load_template,
    parse_verdict,
    render_prompt,
)
from .pipeline import (
    AuditReport,
    HandoffManifest,
    RelevanceMatrix,
    TaskCategory,
    TrainingConversation,
    Video,
    audit,
    annotate_relevance,
    classify_video,
    generate_questions,
    iterate,
    load_dataset,
    rollout,
    run_iteration,
    select_question,
    standardize_and_export,
    synthesize_video,
    validity_filter,
)
from .scoring import (
    BenchmarkReport,
    SampleScore,
    VerdictBundle,
    aggregate,
    far_multiplier,
    premature_penalty,
    quality_term,
    repetition_multiplier,
    score_sample,
)
from .session import (
    BackendConfig,
    HttpSessionBackend,
    ScriptedSessionBackend,
    SessionRecord,
    TurnTranscript,
    VisibleHistory,
    run_session,
    scripted_backend,
)
from .timeline import (
    Action,
    GroundTruthSpec,
    ReferenceAnswer,
    StreamTimeline,
    Subtask,
    TaskMode,
    Trajectory,
    answer_rate,
    read_trajectories_jsonl,
    response_turns,
    validate_alignment,
    write_trajectory_jsonl,
)

__version__ = "0.1.0"

"""Exception hierarchy shared across the harness."""


class StreamHarnessError(Exception):
    """Base class for all harness errors."""


class InvalidInputError(StreamHarnessError):
    """An argument violates a documented precondition."""


class ValidationError(StreamHarnessError):
    """A domain object violates one of its invariants."""


class IncompleteVerdictsError(StreamHarnessError):
    """A quality verdict required for scoring is missing.

    Carries the (gt_turn, response_turn) pair that had no verdict.
    """

    def __init__(self, gt_turn: int, response_turn: int):
        self.gt_turn = gt_turn
        self.response_turn = response_turn
        super().__init__(
            f"missing quality verdict for pair (t*={gt_turn}, t={response_turn})"
        )


class ModeMismatchError(StreamHarnessError):
    """An operation was called for a task mode it does not apply to."""


class TemplateError(StreamHarnessError):
    """A prompt template could not be rendered (unknown id or missing slot)."""


class BackendError(StreamHarnessError):
    """A model backend failed after exhausting the retry policy."""


class ContextOverflowError(StreamHarnessError):
    """Session chat history exceeded the configured hard cap."""


class ConfigError(StreamHarnessError):
    """A run configuration file is missing, malformed, or invalid."""

"""Shared exception types."""


class ConfigError(ValueError):
    """Invalid configuration or option value."""


class DataError(ValueError):
    """Input data violates a precondition (shape, ordering, coverage)."""


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage

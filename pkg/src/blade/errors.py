"""Exception hierarchy.

Each class carries the CLI exit code it maps to, so the command layer can
translate failures without inspecting messages.
"""


class BladeError(Exception):
    exit_code = 1


class ConfigError(BladeError):
    """Invalid or inconsistent configuration (usage error)."""

    exit_code = 1


class DataError(BladeError):
    """Input data that violates the record schema or a data invariant."""

    exit_code = 2


class SchemaError(DataError):
    """A required column is missing or the file layout is unreadable."""


class RecordError(DataError):
    """A single malformed row; ``row`` is the 0-based data row index."""

    def __init__(self, row: int, reason: str):
        super().__init__(f"row {row}: {reason}")
        self.row = row
        self.reason = reason


class ModelError(BladeError):
    """Unfitted, mismatched or corrupt model state."""

    exit_code = 3


class NotFittedError(ModelError):
    def __init__(self, stage: str):
        super().__init__(f"stage '{stage}' is not fitted")
        self.stage = stage


class TrainingError(ModelError):
    """Training diverged or a pipeline stage failed."""

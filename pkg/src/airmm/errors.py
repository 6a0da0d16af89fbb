"""Exception hierarchy shared by every subpackage.

The CLI maps these onto process exit codes, so each class carries the code
it should produce.
"""


class AirmmError(Exception):
    exit_code = 1


class ConfigError(AirmmError, ValueError):
    exit_code = 2


class DimensionError(AirmmError, ValueError):
    exit_code = 2


class PreconditionError(AirmmError, ValueError):
    exit_code = 2


class BatchError(AirmmError, ValueError):
    exit_code = 2


class LengthError(AirmmError, ValueError):
    exit_code = 2


class VocabularyError(AirmmError, KeyError):
    exit_code = 2

    def __str__(self):
        return str(self.args[0]) if self.args else "unknown word"


class OutageError(AirmmError, ValueError):
    exit_code = 3


class FormatError(AirmmError, ValueError):
    """Malformed binary file; ``offset`` is the byte position of the problem."""

    exit_code = 3

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class EvaluationError(AirmmError, ValueError):
    exit_code = 3


class CheckpointError(AirmmError, ValueError):
    exit_code = 3


class DependencyError(AirmmError, RuntimeError):
    """A pipeline stage needs an artifact that an earlier stage never produced."""

    exit_code = 4

    def __init__(self, stage: str, path=None):
        where = f" ({path})" if path is not None else ""
        super().__init__(f"missing output of stage '{stage}'{where}")
        self.stage = stage
        self.path = path

"""Exception hierarchy shared by the library and the CLI.

Each class carries the CLI exit code it maps to.
"""


class ExpertMergeError(Exception):
    exit_code = 1


class ContractViolation(ExpertMergeError, ValueError):
    """Inputs violate a documented precondition or type invariant."""

    exit_code = 1


class NumericalFailure(ExpertMergeError, ArithmeticError):
    """A linear-algebra routine failed to converge."""

    exit_code = 2

    def __init__(self, message, shape=None):
        if shape is not None:
            message = f"{message} (matrix shape {tuple(shape)})"
        super().__init__(message)
        self.shape = shape


class CheckpointError(ExpertMergeError):
    """Malformed or unreadable checkpoint / config file."""

    exit_code = 3


class SchemaVersionError(CheckpointError):
    pass

"""Exception hierarchy.

Each family maps to a CLI exit code: configuration problems exit with 1,
data and file-format problems with 2, numerical failures with 3.
"""


class IntellipredError(Exception):
    exit_code = 1


class ConfigError(IntellipredError, ValueError):
    exit_code = 1


class DataError(IntellipredError, ValueError):
    exit_code = 2


class ShapeError(DataError):
    pass


class FormatError(DataError):
    """Malformed binary file. ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ValidationError(DataError):
    """One or more records failed validation; ``problems`` holds each message."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        head = f"{len(self.problems)} validation error(s)"
        super().__init__(head + ":\n  " + "\n  ".join(self.problems))


class NumericError(IntellipredError, ArithmeticError):
    exit_code = 3

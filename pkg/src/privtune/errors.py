"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: configuration-class errors exit 1,
numeric aborts exit 2, file/format problems exit 3.
"""


class ConfigError(ValueError):
    """A configuration value violates its invariants."""


class ShapeError(ValueError):
    """Array dimensions do not match the declared model geometry."""


class UsageError(ValueError):
    """An operation was called outside its contract (empty batch, mixed tasks, ...)."""


class NumericError(ArithmeticError):
    """A non-finite value appeared where finite arithmetic is required."""


class DatasetFormatError(ValueError):
    """A dataset or manifest file could not be parsed; carries a line number."""

    def __init__(self, path, line_no, message):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")

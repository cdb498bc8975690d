"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class NumericError(ArithmeticError):
    """A value that must be finite is NaN/Inf, or training diverged."""


class FormatError(ValueError):
    """A file does not follow its declared binary format."""


class DataConsistencyError(ValueError):
    """File contents are well-formed but internally inconsistent."""


class TruncatedFileError(IOError):
    """A file ended before its declared payload; carries the byte offset."""

    def __init__(self, path, offset, wanted):
        self.path = path
        self.offset = offset
        self.wanted = wanted
        super().__init__(
            f"{path}: truncated at byte offset {offset} (needed {wanted} more bytes)"
        )


class UsageError(RuntimeError):
    """API called in a state or mode it does not support."""


class ConfigError(ValueError):
    """Invalid experiment configuration; lists every violated field."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid config: " + "; ".join(self.violations))


class CheckpointVersionError(FormatError):
    """Checkpoint was written by an incompatible format version."""

"""Exception types shared across the engine."""


class EngineError(Exception):
    """Base class for all engine errors."""


class ShapeError(EngineError, ValueError):
    """Dimension or geometry mismatch."""


class StateError(EngineError, RuntimeError):
    """Operation called in an invalid order (e.g. backward before forward)."""


class NumericError(EngineError, ArithmeticError):
    """NaN or Inf surfaced by a numeric kernel or optimizer step."""


class FormatError(EngineError, ValueError):
    """Malformed weight file. Carries the byte offset of the defect."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class DecodeError(EngineError, ValueError):
    """Malformed image payload; message names the offending field."""


class ParseError(EngineError, ValueError):
    """Malformed split-list line. Carries the 1-based line number."""

    def __init__(self, message, line):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ItemError(EngineError, ValueError):
    """A dataset item could not be loaded; message names the path."""


class ConfigError(EngineError, ValueError):
    """Invalid model or run configuration."""

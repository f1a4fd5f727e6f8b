"""Exception types. Each carries a short prefix used by the CLI for one-line errors."""


class SicotError(Exception):
    prefix = "error"


class DimensionError(SicotError, ValueError):
    prefix = "dimension"


class NumericError(SicotError, ArithmeticError):
    prefix = "numeric"


class GraphError(SicotError, RuntimeError):
    prefix = "graph"


class EmptyTitleError(SicotError, ValueError):
    prefix = "empty-title"


class ConfigError(SicotError, ValueError):
    prefix = "config"


class MissingFileError(SicotError, FileNotFoundError):
    prefix = "missing-file"


class FormatError(SicotError, ValueError):
    """Malformed input file; ``line`` is 1-based (0 when unknown)."""

    prefix = "format"

    def __init__(self, message, line=0):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


class EmbeddingDimensionError(FormatError, DimensionError):
    """Embedding file width differs from the model width: a format error with the dimension prefix."""

    prefix = "dimension"

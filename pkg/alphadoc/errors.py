"""
AlphaDoc error hierarchy

Every exception raised by the package derives from AlphaDocError and carries
the exit code the CLI maps it to:
- 2 configuration (bad config keys, formulas, prompts)
- 3 data (schema, empty panels, missing inputs, caches)
- 4 numeric (degenerate statistics, singular designs)
- 5 transport (LLM endpoint failures, replay misses)
"""

from typing import Optional


class AlphaDocError(Exception):
    """Base class for all alphadoc failures"""
    exit_code = 1


class OutputError(AlphaDocError):
    """An output file could not be written"""


# Configuration failures

class ConfigError(AlphaDocError):
    exit_code = 2


class PromptError(ConfigError):
    """A prompt precondition was violated (empty parts, empty signal list)"""


class DslError(ConfigError):
    """Base class for formula parsing and evaluation errors"""


class AlphaSyntaxError(DslError):

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class UnknownSignalError(DslError):

    def __init__(self, token: str, position: Optional[int] = None):
        where = f" at position {position}" if position is not None else ""
        super().__init__(f"Unknown signal identifier '{token}'{where}")
        self.token = token
        self.position = position


class DuplicateAlphaError(ConfigError):
    pass


# Data failures

class DataError(AlphaDocError):
    exit_code = 3


class SchemaError(DataError):

    def __init__(self, message: str, column: Optional[str] = None):
        super().__init__(message)
        self.column = column


class EmptyPanelError(DataError):
    pass


class InsufficientCrossSectionError(DataError):

    def __init__(self, date, count: int, required: int):
        super().__init__(
            f"Cross-section at {date} has {count} complete companies, "
            f"{required} required"
        )
        self.date = date
        self.count = count
        self.required = required


class SampleSizeError(DataError):
    pass


class CacheError(DataError):
    pass


class MissingInputError(DataError):

    def __init__(self, paths):
        names = ", ".join(str(p) for p in paths)
        super().__init__(f"Missing input file(s): {names}")
        self.paths = list(paths)


# Numeric failures

class NumericError(AlphaDocError):
    exit_code = 4


class NonFiniteInputError(NumericError):
    pass


class UndefinedCorrelationError(NumericError):
    pass


class DegenerateColumnError(NumericError):
    pass


class SingularDesignError(NumericError):

    def __init__(self, message: str, condition: float = float("inf")):
        super().__init__(message)
        self.condition = condition


class NoUsableDatesError(NumericError):
    pass


class InsufficientObservationsError(NumericError):
    pass


class InvalidStatisticsError(NumericError):
    pass


# Transport failures

class TransportError(AlphaDocError):
    exit_code = 5

    def __init__(self, message: str, status: Optional[int] = None):
        super().__init__(message)
        self.status = status


class AuthError(TransportError):
    pass


class NoFixtureError(TransportError):

    def __init__(self, prompt_hash: str, directory=None):
        where = f" in {directory}" if directory is not None else ""
        super().__init__(f"No replay fixture for prompt hash {prompt_hash}{where}")
        self.prompt_hash = prompt_hash

"""Exception hierarchy.

Every error carries enough context to be surfaced by the CLI with a
stable exit code (see ``decipher.cli``).
"""


class DecipherError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(DecipherError):
    exit_code = 2


class DataError(DecipherError):
    exit_code = 3


class NumericError(DecipherError):
    exit_code = 4


class ParseError(DataError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)


class MissingPhone(DataError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class MissingFeature(DataError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class MissingChar(DataError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class InvalidTemperature(ConfigError, ValueError):
    pass


class InvalidInput(DataError, ValueError):
    pass


class EmptyVocabulary(DataError, ValueError):
    pass


class SpanLengthOutOfRange(DataError, ValueError):
    pass


class InvalidK(ConfigError, ValueError):
    pass


class SpecError(ConfigError, ValueError):
    pass


class NonFiniteError(NumericError, FloatingPointError):
    def __init__(self, message, chunk_id=None):
        self.chunk_id = chunk_id
        if chunk_id is not None:
            message = f"{message} (chunk {chunk_id})"
        super().__init__(message)


class GradcheckFailed(DecipherError):
    exit_code = 5

"""Exception hierarchy shared by all hubnorm modules."""


class HubnormError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(HubnormError):
    """Bad arguments, inconsistent shapes, or violated preconditions."""


class ZeroNormRow(ValidationError):
    def __init__(self, row: int):
        super().__init__(f"row {row} has (near-)zero norm and cannot be normalized")
        self.row = row


class DimMismatch(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class EmptyBank(ValidationError):
    pass


class InvalidK(ValidationError):
    pass


class KTooLarge(ValidationError):
    pass


class IndexOutOfRange(ValidationError):
    pass


class InvalidParams(ValidationError):
    pass


class DegenerateDistribution(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class FileFormatError(HubnormError):
    """Malformed input file; readers reject rather than repair."""


class BadMagic(FileFormatError):
    pass


class BadHeader(FileFormatError):
    pass


class TruncatedFile(FileFormatError):
    pass


class SizeMismatch(FileFormatError):
    pass


class RaggedRows(FileFormatError):
    def __init__(self, line: int, expected: int, got: int):
        super().__init__(f"line {line}: expected {expected} columns, got {got}")
        self.line = line


class ParseError(FileFormatError):
    def __init__(self, line: int, column: int, token: str):
        super().__init__(f"line {line}, column {column}: cannot parse {token!r} as a number")
        self.line = line
        self.column = column

"""Exception hierarchy shared by every mcnet module."""


class MCNetError(Exception):
    """Base class for all contract violations raised by mcnet."""


class DimensionError(MCNetError, ValueError):
    pass


class ContractError(MCNetError, ValueError):
    pass


class NumericError(MCNetError, ArithmeticError):
    pass


class ConfigError(MCNetError, ValueError):
    pass


class FormatError(MCNetError, ValueError):
    """A PLY file lacks a required property."""


class PLYParseError(MCNetError, ValueError):
    def __init__(self, message, line_number):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class EmptyNeighborhoodError(MCNetError, ValueError):
    pass


class DegenerateBatchError(MCNetError, ValueError):
    pass

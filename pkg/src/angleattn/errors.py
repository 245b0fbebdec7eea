"""Exception types shared across the package."""


class AngleAttnError(Exception):
    """Base class for all library errors."""


class DimensionError(AngleAttnError, ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigError(AngleAttnError, ValueError):
    """A configuration value is out of range or inconsistent."""


class ContractError(AngleAttnError, ValueError):
    """A documented precondition of an operation was violated."""


class NumericError(AngleAttnError, ValueError):
    """Non-finite values where finite ones are required."""


class FormatError(AngleAttnError, ValueError):
    """A file on disk does not match the expected binary layout."""


class SplitError(AngleAttnError, ValueError):
    """A labeled dataset cannot be partitioned as requested."""


class LabelError(AngleAttnError, ValueError):
    """A class id is outside the configured range."""


class EvalError(AngleAttnError, ValueError):
    """Evaluation was requested on an empty or malformed sample set."""

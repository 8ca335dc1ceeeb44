"""Exception types shared across the toolkit."""


class ToolkitError(Exception):
    """Base class for all errors raised by minmt."""


class ShapeError(ToolkitError):
    """Operand shapes are incompatible for the requested operation."""


class TokenIdError(ToolkitError):
    """A token id falls outside the table it indexes."""


class StateError(ToolkitError):
    """An operation was called out of order (e.g. backward before forward)."""


class NumericError(ToolkitError):
    """A non-finite value appeared where finite math is required."""


class MaskError(ToolkitError):
    """A mask leaves no valid position to operate on."""


class ConfigError(ToolkitError):
    """A configuration value is out of range or inconsistent."""


class UsageError(ToolkitError):
    """Command-line usage problem: missing files, bad flag combinations."""

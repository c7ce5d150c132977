"""Exception hierarchy. Every error raised by weft derives from WeftError."""


class WeftError(Exception):
    pass


class ShapeError(WeftError):
    """Inconsistent tensor shapes or invalid extents."""


class GraphError(WeftError):
    """Structurally invalid graph (cycles, broken wiring, failed passes)."""


class ParseError(WeftError):
    """Model file that cannot be decoded."""


class TruncatedError(ParseError):
    """Model file ends before a declared payload does."""


class LimitError(ParseError):
    """Model exceeds a configured size or nesting limit."""


class UnsupportedError(WeftError):
    """Well-formed model using an operator, dtype or attribute outside the
    supported subset."""


class RegistrationError(WeftError):
    """Duplicate kernel backend id."""


class UnknownBackendError(WeftError):
    """Backend id that is not registered or not applicable to the layer."""


class PlanError(WeftError):
    """Execution plan could not be constructed."""


class InputError(WeftError):
    """Missing or mis-shaped input tensor at execution time."""


class NumericError(WeftError):
    """Non-finite intermediate detected while check_finite is enabled."""


class ConfigError(WeftError):
    """Invalid run or pipeline configuration."""

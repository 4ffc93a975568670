"""Exception types shared across the package."""


class StrataError(Exception):
    """Base class for all package errors."""


class DimensionError(StrataError, ValueError):
    pass


class OutOfDomainError(StrataError, ValueError):
    pass


class ConstraintError(StrataError, ValueError):
    pass


class CoverageError(StrataError, ValueError):
    """Requested time or space range is not covered by the data."""

    def __init__(self, msg, missing=None):
        super().__init__(msg)
        self.missing = missing


class ConfigError(StrataError, ValueError):
    pass


class DependencyError(StrataError):
    """A pipeline stage is missing the output of an upstream stage."""

    def __init__(self, msg, producer=None):
        super().__init__(msg)
        self.producer = producer


class NumericGuardError(StrataError, ArithmeticError):
    """A numerical guard tripped (degenerate step, cost cap, runaway loop)."""


class DegenerateStepError(NumericGuardError):
    def __init__(self, msg, node=None):
        super().__init__(msg)
        self.node = node


class CostGuardError(NumericGuardError):
    pass


class StructuralError(NumericGuardError):
    """A combinatorial structure violates its contract (overlap, no termination)."""

    def __init__(self, msg, detail=None):
        super().__init__(msg)
        self.detail = detail


class OracleError(NumericGuardError):
    """A density oracle returned a non-finite or negative value."""

    def __init__(self, msg, point=None, radius=None):
        super().__init__(msg)
        self.point = point
        self.radius = radius

"""Exception types shared across the package."""


class CartImpError(Exception):
    """Base class for all errors raised by cartimp."""


class ModelSyntaxError(CartImpError):
    """Malformed robot description markup."""

    def __init__(self, message, line=None, offset=None):
        self.line = line
        self.offset = offset
        where = ""
        if line is not None:
            where = f" (line {line}" + (f", offset {offset})" if offset is not None else ")")
        super().__init__(message + where)


class ModelSemanticError(CartImpError):
    """Well-formed description that violates a model invariant."""


class PathError(CartImpError):
    """No actuated path between the requested base and tip links."""


class DimensionError(CartImpError, ValueError):
    """Array argument with the wrong shape for the bound chain."""


class DomainError(CartImpError, ValueError):
    """Scalar parameter outside its admissible range."""


class SingularMassMatrixError(CartImpError):
    """Joint-space inertia matrix is numerically singular."""


class NonFiniteInputError(CartImpError, ValueError):
    """NaN or inf passed to the controller."""


class EmptyTrajectoryError(CartImpError, ValueError):
    pass


class NonMonotoneTimestampsError(CartImpError, ValueError):
    pass


class NonFiniteStateError(CartImpError):
    """Simulation state diverged. ``record`` holds the last finite log record."""

    def __init__(self, message, t=None, record=None):
        self.t = t
        self.record = record
        super().__init__(message)


class WindowTooLongError(CartImpError, ValueError):
    pass


class ScenarioError(CartImpError, ValueError):
    """Scenario document fails schema validation."""


class BoundsWarning(UserWarning):
    """A requested gain or wrench target was clamped to its limits."""

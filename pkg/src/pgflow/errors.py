"""Exception hierarchy shared by all pgflow modules."""


class PGFlowError(Exception):
    """Base class for every error raised by pgflow."""


class DomainError(PGFlowError, ValueError):
    """Argument outside the domain of an operation (e.g. reflecting the origin)."""


class StructureError(PGFlowError, ValueError):
    """A rational map or state does not have the structure an operation needs."""


class DegenerateStructureError(StructureError):
    """Multiple zeros, or two zeros that are reflections of each other."""


class BoundaryZeroError(StructureError):
    """A zero of g sits on the unit circle."""


class UnsupportedStructureError(StructureError):
    """Structure outside the family an operation is implemented for."""


class PoleEvaluationError(PGFlowError, ZeroDivisionError):
    """Evaluation requested at a pole."""


class PathSingularityError(PGFlowError, ValueError):
    """An integration path passes too close to a pole."""


class PreconditionError(PGFlowError, ValueError):
    """Operation called on a state that does not satisfy its precondition."""


class StepRejectedError(PGFlowError, ArithmeticError):
    """An integrator stage hit a degenerate configuration."""

    def __init__(self, message, suggested_dt=None):
        super().__init__(message)
        self.suggested_dt = suggested_dt


class SubordinationError(PGFlowError, ValueError):
    """The subordination flow is undefined for a non-admissible state."""


class ScenarioRangeError(PGFlowError, ValueError):
    """Time outside the validity range of a closed-form scenario."""


class GridTooSmallError(PGFlowError, RuntimeError):
    """Swept mass reached the boundary ring of the grid."""

    def __init__(self, message, suggested_extent=None):
        super().__init__(message)
        self.suggested_extent = suggested_extent


class IterationLimitError(PGFlowError, RuntimeError):
    """Iterative solver did not converge within its iteration budget."""


class OutOfRangeError(PGFlowError, ValueError):
    """Mapped mass leaves the destination grid."""


class ConfigError(PGFlowError, ValueError):
    """Malformed run configuration."""

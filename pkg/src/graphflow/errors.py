"""Exception types raised across the package."""


class GraphFlowError(Exception):
    """Base class for all package errors."""


class SingularMetric(GraphFlowError):
    pass


class MissingGhost(GraphFlowError):
    pass


class StencilTooNarrow(GraphFlowError):
    pass


class NonpositiveProfile(GraphFlowError):
    pass


class ContactAngleTooSteep(GraphFlowError):
    pass


class DegenerateShape(GraphFlowError):
    pass


class WrongDimension(GraphFlowError):
    pass


class StepRejected(GraphFlowError):
    """Raised when a step leaves the blowup guard |u| <= u_max, omega <= omega_max."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class NoConvergence(GraphFlowError):
    """Raised when an elliptic solve stalls; carries the last residuals."""

    def __init__(self, message, residual_pde=None, residual_bc=None):
        super().__init__(message)
        self.residual_pde = residual_pde
        self.residual_bc = residual_bc


class ParseError(GraphFlowError):
    def __init__(self, message, line=None, key=None):
        loc = []
        if line is not None:
            loc.append(f"line {line}")
        if key is not None:
            loc.append(f"key {key!r}")
        super().__init__(f"{message} ({', '.join(loc)})" if loc else message)
        self.line = line
        self.key = key


class ValidationError(GraphFlowError):
    def __init__(self, message, key=None, reason=None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key
        self.reason = reason

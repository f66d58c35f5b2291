"""Exception types shared across the package."""


class SingHypError(Exception):
    """Base class; the CLI reports ``type(err).__name__`` for these."""


class DomainError(SingHypError, ValueError):
    """A point lies outside the closed square [-1, 1]^2."""


class ParamError(SingHypError, ValueError):
    """A family parameter violates one of its defining inequalities."""


class SingularHitError(SingHypError):
    """Raised by operations that need a point off N+ (e.g. the Jacobian)."""

    def __init__(self, point, where):
        super().__init__(f"point {tuple(point)} lies on {where}")
        self.point = tuple(point)
        self.where = where


class Unsupported(SingHypError):
    """The requested operation is not defined for this map family."""


class OrbitTerminated(SingHypError):
    """An orbit entered the singular collar before completing.

    ``partial`` carries whatever was computed up to that point.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class EscapedOrbitError(SingHypError):
    """A numerical image left the closed square: a formula or parameter bug."""


class EmptyInput(SingHypError, ValueError):
    pass


class GridMismatch(SingHypError, ValueError):
    pass


class LeafCollapse(SingHypError):
    pass


class SingularStart(SingHypError):
    pass


class ConfigError(SingHypError, ValueError):
    """Run configuration could not be parsed; the message names the field."""

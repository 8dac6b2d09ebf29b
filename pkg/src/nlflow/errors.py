"""Exception types shared across the package."""


class NlflowError(Exception):
    """Base class for all package errors."""


class HaloError(NlflowError):
    """Stencil or kernel does not fit in the grid's halo."""


class WindowBoundsError(NlflowError):
    """A window was requested that crosses the grid boundary."""


class BoundaryTouchError(NlflowError):
    """A set mask intersects the halo band where it must not."""


class NotConvergedError(NlflowError):
    """Iterative solve stopped at max_iter before reaching tolerance.

    The best iterate and its diagnostics are attached as ``solution``.
    """

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


class DomainTooSmallError(NlflowError):
    """An evolving set reached the computational boundary."""


class NestingViolationError(NlflowError):
    """Level-set trajectories lost their nesting order."""


class BudgetExceededError(NlflowError):
    """An oracle enumeration exceeded its cell or time budget."""


class FormatError(NlflowError):
    """Malformed serialized field, mask, dual, or config."""


class ConfigError(NlflowError):
    """Missing or unknown configuration keys."""

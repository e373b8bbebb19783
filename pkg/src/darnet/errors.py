"""Exception types shared across the package."""


class InvalidParameterError(ValueError):
    """A parameter lies outside the domain of the requested operation."""


class WrongVariantError(InvalidParameterError):
    """The operation is not defined for the model variant in use."""


class EventCapExceeded(RuntimeError):
    """A simulation hit its event cap before reaching its horizon.

    ``partial`` carries whatever result had been assembled when the cap hit.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class RefinedPreconditionError(RuntimeError):
    """The refined retries coupling was asked to act outside its domain."""


class DominationViolation(AssertionError):
    """A sandwich coupling produced an ordering violation."""


class ReplicaError(RuntimeError):
    """A replica failed; ``index`` identifies which one."""

    def __init__(self, index, cause):
        super().__init__(f"replica {index} failed: {cause!r}")
        self.index = index
        self.cause = cause

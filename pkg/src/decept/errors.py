"""Exception types shared across the package."""


class DeceptError(Exception):
    """Base class for every error this package raises deliberately."""


class ExpressionError(DeceptError):
    """Invalid expression construction (nonpositive coefficient, non-finite data)."""


class UnboundVariableError(DeceptError):
    """An expression referenced a variable the assignment does not bind."""

    def __init__(self, name: str):
        super().__init__(f"variable {name!r} is not bound in the assignment")
        self.name = name


class DomainError(DeceptError):
    """A numeric argument fell outside its mathematical domain."""


class ModelError(DeceptError):
    """Malformed MDP, policy, profile, or allocation."""


class UnavailableActionError(ModelError):
    """A path or policy used an action that is not available in its state."""

    def __init__(self, state: int, action: str):
        super().__init__(f"action {action!r} is not available in state {state}")
        self.state = state
        self.action = action


class ProgramError(DeceptError):
    """An optimization program could not be built or is structurally invalid."""


class SolverError(DeceptError):
    """The convex solver was called with unusable inputs."""


class InstanceFormatError(DeceptError):
    """An instance, allocation, or report file failed schema validation."""

    def __init__(self, message: str, path=None):
        if path is not None:
            message = f"{path}: {message}"
        super().__init__(message)
        self.path = path


class InfeasibleRegionError(DeceptError):
    """No feasible point exists in the searched region."""

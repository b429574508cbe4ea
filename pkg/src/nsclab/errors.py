"""Exception types raised across the package."""


class NSCLabError(Exception):
    """Base class for all package errors."""


class ConfigurationError(NSCLabError, ValueError):
    """Invalid grid, parameter or run configuration."""


class ContractError(NSCLabError, ValueError):
    """An argument violates an operation's precondition (wrong representation, shape...)."""


class DomainError(NSCLabError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class ResolutionError(NSCLabError, ValueError):
    """Quadrature or lattice too coarse for the requested evaluation.

    ``required_n`` carries the node count that would resolve it, when known.
    """

    def __init__(self, message, required_n=None):
        super().__init__(message)
        self.required_n = required_n


class InsufficientDataError(NSCLabError, ValueError):
    """Too few samples to fit or integrate."""


class DataError(NSCLabError, ValueError):
    """Sample values unusable for the requested fit (e.g. nonpositive in a log fit)."""


class VacuumProximityError(NSCLabError, ArithmeticError):
    """Density perturbation so negative that 1 + eps*a approaches vacuum.

    This is a breakdown of the model, not of the solver.
    """


class BlowUpError(NSCLabError, ArithmeticError):
    """Non-finite values appeared during time stepping.

    ``last_state`` holds the last finite state.
    """

    def __init__(self, message, last_state=None):
        super().__init__(message)
        self.last_state = last_state

"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class ResourceError(RuntimeError):
    """A request exceeds a configured size limit."""


class QuadratureError(ArithmeticError):
    """Numerical integration failed to reach its error target."""


class InvariantError(AssertionError):
    """A simulated replica violated a structural identity."""


class DataError(ValueError):
    """Experiment tables are missing or inconsistent."""

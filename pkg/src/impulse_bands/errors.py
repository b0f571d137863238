"""Exception types shared across the package."""


class ImpulseError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(ImpulseError):
    """Malformed or inconsistent problem configuration."""


class ValidationError(ConfigError):
    """A constructed object violates one of its invariants."""


class ExprSyntaxError(ConfigError):
    """Expression text could not be parsed."""

    def __init__(self, message, position=None):
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)
        self.position = position


class ExprEvalError(ImpulseError):
    """Expression evaluation left its mathematical domain."""


class CatalogMissError(ImpulseError):
    """Diffusion is not covered by the closed-form catalog."""


class SolverError(ImpulseError):
    """Band-policy solver could not produce a result."""


class OracleError(ImpulseError):
    """Grid value iteration failed or did not converge."""


class SimulationError(ImpulseError):
    """Monte Carlo simulation was asked to do something invalid."""

"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """Arguments have inconsistent shapes or otherwise break a precondition."""


class InvalidInput(ValueError):
    """Input values are unusable (non-finite, empty, out of range)."""


class OutOfDomainError(ValueError):
    """A feature vector lies in no region of the simulated system."""

    def __init__(self, message, t=None):
        super().__init__(message if t is None else f"t={t}: {message}")
        self.t = t


class ConfigError(ValueError):
    """Invalid configuration value; ``field`` names the offending entry."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class DivergenceError(RuntimeError):
    """Parameters became non-finite during a recursive update."""

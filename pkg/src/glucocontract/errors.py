"""Exception types shared across the package."""


class DomainError(ValueError):
    """Input outside the mathematical domain of an operation."""


class InfeasibleSetpoint(DomainError):
    """Requested glucose setpoint cannot be held with nonnegative insulin."""


class ConfigError(ValueError):
    """Bad or unknown configuration (subject, scenario, file contents)."""


class IntegrationError(RuntimeError):
    """Integrator produced a non-finite value."""

    def __init__(self, message, time=None, trial=None):
        super().__init__(message)
        self.time = time
        self.trial = trial


class Infeasible(Exception):
    """Gain synthesis could not reach the required contraction margin.

    ``best_margin`` is the largest margin found and ``certificate`` the
    candidate that achieved it.
    """

    def __init__(self, best_margin, certificate=None):
        super().__init__(f"required margin not reached (best margin {best_margin:.6g})")
        self.best_margin = best_margin
        self.certificate = certificate

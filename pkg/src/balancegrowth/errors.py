"""Exception hierarchy shared across the library and the CLI."""


class BalanceGrowthError(Exception):
    """Base class for all library errors."""


class MalformedInputError(BalanceGrowthError):
    """Input data violates a structural contract (bad CSV row, duplicate user, ...)."""


class HorizonError(BalanceGrowthError):
    """Snapshot pair does not define a positive horizon."""


class InsufficientDataError(BalanceGrowthError):
    """Too few observations to run the requested operation."""


class DegenerateTailError(BalanceGrowthError):
    """Tail has no spread (all values equal), so the fit is undefined."""


class FitConvergenceError(BalanceGrowthError):
    """Optimizer exhausted its budget; carries the best iterate found."""

    def __init__(self, message, best_params=None, best_loglik=None):
        super().__init__(message)
        self.best_params = best_params
        self.best_loglik = best_loglik


class RegimeMixError(BalanceGrowthError):
    """Bin means carry mixed signs; split into regimes before fitting."""


class NoRetainedBinsError(BalanceGrowthError):
    """Every bin fell below the minimum count."""


class ConfigError(BalanceGrowthError):
    """Simulation config file is invalid; message names the offending key."""

"""Exception types shared across the package."""


class ZoclipError(Exception):
    pass


class OracleError(ZoclipError):
    """Oracle evaluation failed; carries the sample key for diagnosis."""

    def __init__(self, message, sample_key=None):
        super().__init__(message)
        self.sample_key = sample_key


class NonFiniteValueError(OracleError):
    """Oracle returned NaN/Inf, or a non-finite scalar reached the estimator."""


class OracleTimeoutError(OracleError):
    """External oracle did not reply within the configured timeout."""


class MalformedReplyError(OracleError):
    """External oracle reply could not be parsed as a single decimal."""


class ConfigError(ZoclipError):
    """Invalid configuration value or unknown config key."""


class InfeasiblePlanError(ZoclipError):
    """No feasible batch size below the configured ceiling."""

    def __init__(self, message, limiting_eta=None):
        super().__init__(message)
        self.limiting_eta = limiting_eta

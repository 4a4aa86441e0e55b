"""Exception types shared across the package. The CLI maps these to exit codes."""


class ConfigError(ValueError):
    """Invalid configuration value or malformed config document (exit 2)."""


class CalibrationError(RuntimeError):
    """Delay-model fit is under-determined or failed."""


class NumericalDivergenceError(RuntimeError):
    """Training produced non-finite losses or rewards (exit 3)."""


class BackendError(RuntimeError):
    """Measured-delay backend failed mid-run (exit 4)."""


class UnsupportedPlatformError(RuntimeError):
    """Host utilization counters are unavailable; never silently zero."""

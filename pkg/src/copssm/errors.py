"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class NumericError(RuntimeError):
    """A numerical routine failed to converge or produced an invalid value."""


class FitError(RuntimeError):
    """A model fit could not be carried out (rank deficiency, too few points)."""


class ConfigError(ValueError):
    """Invalid or incomplete run configuration."""


class CompletenessError(ValueError):
    """Required entries (predictions, truth cells) are missing."""

"""Exception types shared across the package."""


class ArtifactError(Exception):
    """Base class for errors raised by icexperts."""


class ConfigError(ArtifactError, ValueError):
    """Inconsistent experiment configuration or violated algorithm precondition."""


class DataError(ArtifactError, ValueError):
    """Malformed or unusable input data."""


class DomainError(ArtifactError, ValueError):
    """A probability, loss or outcome outside its allowed range."""


class StepSizeError(ConfigError):
    """A step size that would make a weight multiplier non-positive."""


class HorizonTooShortError(ConfigError):
    """The horizon is too short for the requested default step size."""


class CombinatorialBlowupError(ConfigError):
    """Enumeration over all m-subsets would exceed the configured cap."""


class SurvivalUnderflowError(ArtifactError, OverflowError):
    """The survival function underflowed, so the hazard rate is not representable."""

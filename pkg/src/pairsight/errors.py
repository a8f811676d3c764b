"""Exception types shared across the package."""


class PairsightError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(PairsightError, ValueError):
    """A physical parameter is out of its valid domain."""


class DimensionError(PairsightError, ValueError):
    """Array dimensions are inconsistent with the requested operation."""


class DegenerateDistributionError(PairsightError, ValueError):
    """A probability distribution has no mass to sample from."""


class FitError(PairsightError, RuntimeError):
    """A calibration fit failed outright (non-finite objective, no peak)."""


class TailRegionError(FitError):
    """The histogram has no usable exponential tail above the read-noise peak."""


class ConfigError(PairsightError, ValueError):
    """An experiment configuration failed schema validation."""


class CheckpointError(PairsightError, ValueError):
    """A parameter container does not match the requested model."""

"""Exception types raised across the package."""


class HeroError(Exception):
    """Base class for all package errors."""


class AngleNearPi(HeroError, ValueError):
    """Rotation angle too close to pi for a well-conditioned logarithm."""


class ResolutionMismatch(HeroError, ValueError):
    """Cartesian resolution is not an integer multiple of the range resolution."""


class SizeIndivisible(HeroError, ValueError):
    """Image size is not divisible by the network's total downsampling factor."""


class OutOfBounds(HeroError, IndexError):
    """Sampling coordinates fall outside the image."""


class NoForwardTape(HeroError, RuntimeError):
    """Backpropagation was requested without a recorded forward pass."""


class SolverDiverged(HeroError, RuntimeError):
    """Gauss-Newton cost kept increasing or became non-finite."""


class SingularSystem(HeroError, RuntimeError):
    """Normal equations could not be factorized."""


class TooShort(HeroError, ValueError):
    """Groundtruth path is shorter than the smallest evaluation length."""


class ConfigError(HeroError, ValueError):
    pass


class ParseError(ConfigError):
    pass


class ValidationError(ConfigError):
    """Invalid configuration value; ``path`` names the offending field."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")

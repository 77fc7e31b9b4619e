"""Exception types shared across the toolbox."""


class FracmonoError(Exception):
    """Base class for all toolbox-specific errors."""


class ResonanceViolation(FracmonoError):
    """Exterior data is inadmissible: the right-hand side is not orthogonal
    to the kernel of the interior operator, so no solution exists."""


class ResonantPotential(FracmonoError):
    """Operation requires a potential with trivial interior kernel."""


class DegeneratePencil(FracmonoError):
    """Both quadratic forms of a Rayleigh-quotient pencil vanished numerically."""


class WitnessSearchError(FracmonoError):
    """A localized-potential search could not reach the required weighted
    energy; typically the grid is too coarse for the requested witness."""


class ConfigError(FracmonoError):
    """Experiment configuration failed schema validation."""

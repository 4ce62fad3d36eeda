"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Tensor extents or operator shapes do not line up."""


class NumericalError(RuntimeError):
    """A numerical routine failed (SVD non-convergence, blow-up, ...)."""


class TruncationFailure(NumericalError):
    """Cumulative discarded weight exceeded the configured threshold."""

    def __init__(self, message, step=None, bond_profile=None, entropy_profile=None):
        super().__init__(message)
        self.step = step
        self.bond_profile = bond_profile
        self.entropy_profile = entropy_profile
        self.partial = None


class ConfigError(ValueError):
    """Invalid model parameters or job configuration."""

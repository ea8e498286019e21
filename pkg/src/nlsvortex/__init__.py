"""Scattering numerics for a cubic NLS with time-dependent coefficients and the
self-similar vortex filaments it describes."""
from .core import Params, Grid, SpectralField

__all__ = ["Params", "Grid", "SpectralField"]
__version__ = "0.1.0"

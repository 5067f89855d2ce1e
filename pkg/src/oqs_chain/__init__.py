"""Open three-oscillator chain: master equations, Gaussian dynamics and transport."""

from .model import ChainParams, NormalModes, mean_photon, normal_modes, spectral_density, thermal_weight
from .quadrature import QuadratureError, QuadratureSpec

__all__ = [
    "ChainParams",
    "NormalModes",
    "QuadratureError",
    "QuadratureSpec",
    "mean_photon",
    "normal_modes",
    "spectral_density",
    "thermal_weight",
]

"""Snapshot spectral imaging with an orthogonal diffraction aperture.

Simulates the optical chain of a lens + orthogonal slit-array mask +
mosaic filter sensor, and reconstructs hyperspectral cubes from the
resulting single-shot measurements (proximal-gradient solver or the
cascaded shift-shuffle unfolding network).
"""

__version__ = "0.1.0"

from .errors import (
    AdisimError,
    ConfigError,
    DataError,
    NumericError,
    ParameterError,
    SamplingError,
    ShapeError,
)
from .spectral import HSICube, Measurement, QualityReport, WavelengthGrid, psnr, ssim

__all__ = [
    "AdisimError",
    "ConfigError",
    "DataError",
    "HSICube",
    "Measurement",
    "NumericError",
    "ParameterError",
    "QualityReport",
    "SamplingError",
    "ShapeError",
    "WavelengthGrid",
    "psnr",
    "ssim",
]

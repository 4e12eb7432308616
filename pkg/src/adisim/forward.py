"""Linear measurement operator: per-band PSF convolution, mosaic, band sum.

The sensor sees L[x,y] = sum_k Q_k[x,y] * (cube_k conv psf_k)[x,y], where
Q is the periodic mosaic filter response.  Convolution uses the "valid"
boundary, so the input cube must be larger than the measurement by the
kernel margin (margin-consuming convolution avoids boundary artifacts).
``adjoint_apply`` is the exact transpose, verified by inner-product tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, ShapeError
from .optics import PSFStack
from .spectral import HSICube, Measurement, WavelengthGrid


@dataclass
class MosaicPattern:
    """Periodic super-pixel filter layout.

    ``assignment`` is a (period x period) map of channel indices tiled over
    the sensor; ``responses`` is the (channels x bands) transmittance
    matrix in [0, 1].
    """

    period: int
    channels: int
    assignment: np.ndarray
    responses: np.ndarray

    def __post_init__(self):
        self.assignment = np.asarray(self.assignment, dtype=np.int64)
        self.responses = np.asarray(self.responses, dtype=np.float64)
        if self.assignment.shape != (self.period, self.period):
            raise ShapeError(
                f"assignment must be {self.period}x{self.period}, got {self.assignment.shape}")
        if self.responses.ndim != 2 or self.responses.shape[0] != self.channels:
            raise ShapeError(
                f"responses must be (channels, bands), got {self.responses.shape}")
        if self.assignment.min() < 0 or self.assignment.max() >= self.channels:
            raise ParameterError("assignment references an undefined channel")
        if np.any(self.responses < 0) or np.any(self.responses > 1):
            raise ParameterError("responses must lie in [0, 1]")
        if np.any(np.all(self.responses == 0, axis=1)):
            raise ParameterError("every channel needs a nonzero response row")

    @property
    def bands(self) -> int:
        return self.responses.shape[1]

    def assignment_plane(self, height: int, width: int) -> np.ndarray:
        reps = (-(-height // self.period), -(-width // self.period))
        return np.tile(self.assignment, reps)[:height, :width]

    def response_plane(self, height: int, width: int, band: int) -> np.ndarray:
        """Per-pixel transmittance of one band over an HxW sensor."""
        if not 0 <= band < self.bands:
            raise IndexError(f"band {band} out of range [0, {self.bands})")
        return self.responses[self.assignment_plane(height, width), band]


def mosaic_response(mosaic: MosaicPattern, x: int, y: int, band: int) -> float:
    """Transmittance of sensor pixel (x, y) at one band."""
    if x < 0 or y < 0:
        raise IndexError(f"pixel indices must be nonnegative, got ({x}, {y})")
    if not 0 <= band < mosaic.bands:
        raise IndexError(f"band {band} out of range [0, {mosaic.bands})")
    ch = mosaic.assignment[y % mosaic.period, x % mosaic.period]
    return float(mosaic.responses[ch, band])


def gaussian_responses(grid: WavelengthGrid, channels: int,
                       peak: float = 0.9, width_factor: float = 1.0) -> np.ndarray:
    """Smooth synthetic filter bank: one Gaussian passband per channel."""
    if channels < 1:
        raise ParameterError("need at least one channel")
    lams = grid.lambdas
    span = max(grid.lam_max - grid.lam_min, grid.lam_min * 1e-3)
    centers = np.linspace(grid.lam_min, grid.lam_max, channels + 2)[1:-1]
    sigma = width_factor * span / (2.0 * channels)
    out = np.empty((channels, grid.count))
    for c, mu in enumerate(centers):
        out[c] = peak * np.exp(-0.5 * ((lams - mu) / sigma) ** 2)
    return out


_PRESET_ASSIGNMENTS = {
    # period, channels, layout (Bayer-like families)
    "2x2x3": (2, 3, [[1, 0], [2, 1]]),
    "3x3x4": (3, 4, [[0, 1, 2], [3, 0, 1], [2, 3, 0]]),
    "4x4x9": (4, 9, [[0, 1, 2, 3], [4, 5, 6, 7], [8, 0, 1, 2], [3, 4, 5, 6]]),
}


def preset_mosaic(name: str, grid: WavelengthGrid) -> MosaicPattern:
    """Standard super-pixel variants with Gaussian filter banks."""
    if name not in _PRESET_ASSIGNMENTS:
        raise ParameterError(
            f"unknown mosaic preset {name!r}; choose from {sorted(_PRESET_ASSIGNMENTS)}")
    period, channels, layout = _PRESET_ASSIGNMENTS[name]
    return MosaicPattern(period=period, channels=channels,
                         assignment=np.array(layout),
                         responses=gaussian_responses(grid, channels))


def all_pass_mosaic(grid: WavelengthGrid) -> MosaicPattern:
    """Single panchromatic channel; useful for oracles and flux checks."""
    return MosaicPattern(period=1, channels=1,
                         assignment=np.zeros((1, 1), dtype=np.int64),
                         responses=np.ones((1, grid.count)))


@dataclass
class ForwardOperator:
    """Matrix-free A: (H', W', K) cube -> (H, W) measurement."""

    psf: PSFStack
    mosaic: MosaicPattern
    in_shape: tuple[int, int, int]
    boundary: str = "valid"
    out_shape: tuple[int, int] = field(init=False)

    def __post_init__(self):
        if self.boundary != "valid":
            raise ParameterError(f"only 'valid' boundary is supported, got {self.boundary!r}")
        hp, wp, k = self.in_shape
        s = self.psf.side
        if k != self.psf.bands:
            raise ShapeError(f"cube bands {k} do not match PSF stack bands {self.psf.bands}")
        if self.mosaic.bands != k:
            raise ShapeError(
                f"mosaic responses cover {self.mosaic.bands} bands, cube has {k}")
        if hp < s or wp < s:
            raise ShapeError(
                f"cube {hp}x{wp} smaller than kernel side {s}; no valid region")
        self.out_shape = (hp - s + 1, wp - s + 1)

    @property
    def grid(self) -> WavelengthGrid:
        return self.psf.grid

    # Raw array paths keep the operator exactly linear; the public wrappers
    # below add the domain containers.
    def apply(self, cube: np.ndarray) -> np.ndarray:
        from scipy.signal import fftconvolve

        if cube.shape != self.in_shape:
            raise ShapeError(f"cube shape {cube.shape} != operator input {self.in_shape}")
        h, w = self.out_shape
        out = np.zeros((h, w))
        for k in range(self.psf.bands):
            band = fftconvolve(cube[:, :, k], self.psf.kernels[k], mode="valid")
            out += band * self.mosaic.response_plane(h, w, k)
        return out

    def apply_adjoint(self, meas: np.ndarray) -> np.ndarray:
        from scipy.signal import fftconvolve

        if meas.shape != self.out_shape:
            raise ShapeError(f"measurement shape {meas.shape} != operator output {self.out_shape}")
        h, w = self.out_shape
        out = np.empty(self.in_shape)
        for k in range(self.psf.bands):
            weighted = meas * self.mosaic.response_plane(h, w, k)
            out[:, :, k] = fftconvolve(weighted, self.psf.kernels[k][::-1, ::-1], mode="full")
        return out


def forward_apply(cube: HSICube, op: ForwardOperator) -> Measurement:
    """Simulate the sensor readout for a radiance cube."""
    if cube.data.shape != op.in_shape:
        raise ShapeError(f"cube shape {cube.data.shape} != operator input {op.in_shape}")
    return Measurement(np.maximum(op.apply(cube.data), 0.0))


def adjoint_apply(meas: Measurement, op: ForwardOperator) -> HSICube:
    """Back-project a measurement to the cube grid (transpose of forward)."""
    if meas.data.shape != op.out_shape:
        raise ShapeError(f"measurement shape {meas.data.shape} != operator output {op.out_shape}")
    return HSICube(np.maximum(op.apply_adjoint(meas.data), 0.0), op.grid)


def add_noise(meas: Measurement, kind: str = "gaussian", sigma: float = 0.0,
              peak: float | None = None, seed: int = 0) -> Measurement:
    """Reproducible sensor noise; output clamped at zero.

    ``gaussian`` adds N(0, sigma); ``poisson`` rescales so the brightest
    pixel mean is ``peak`` counts, draws, and scales back; ``mixed``
    applies both.
    """
    if kind not in ("gaussian", "poisson", "mixed"):
        raise ParameterError(f"unknown noise kind {kind!r}")
    if sigma < 0:
        raise ParameterError(f"sigma must be nonnegative, got {sigma}")
    rng = np.random.default_rng(seed)
    data = meas.data.copy()
    if kind in ("poisson", "mixed"):
        if peak is None or peak <= 0:
            raise ParameterError("poisson noise needs a positive peak count")
        top = data.max()
        if top > 0:
            scale = peak / top
            data = rng.poisson(data * scale).astype(np.float64) / scale
    if kind in ("gaussian", "mixed") and sigma > 0:
        data = data + rng.normal(0.0, sigma, size=data.shape)
    return Measurement(np.maximum(data, 0.0))

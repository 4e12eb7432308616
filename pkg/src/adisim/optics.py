"""Diffraction model of the orthogonal slit-array aperture.

The aperture is an N x N array of rectangular holes (width ``b`` along x,
height ``a`` along y, period ``d`` on both axes) placed at distance ``f2``
from the sensor.  Under the far-field/paraxial approximation the intensity
at sensor position (x, y) for wavelength lam factors into a single-hole
envelope (``diffraction_factor``) and a multi-slit comb
(``interference_factor``); diffraction orders sit on the lattice
x = Dx * lam * f2 / d, y = Dy * lam * f2 / d.

Two PSF synthesis paths are provided and cross-checked:

* ``psf_analytic`` samples the closed-form intensity on the pixel grid.
* ``psf_numeric`` propagates an explicitly sampled mask by evaluating its
  discrete-time Fourier transform at the exact pixel-grid frequencies
  (chirp-z transform), with a per-cell sinc correction so that a binary
  mask whose edges fall on sample boundaries is propagated without any
  discretization error.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ParameterError, SamplingError, ShapeError
from .spectral import WavelengthGrid

# |sin(gamma)| below this is treated as a principal maximum and replaced
# by the exact limit value N^2 (per axis).
_SINGULARITY_EPS = 1e-12

_KERNEL_SUM_TOL = 1e-9


@dataclass(frozen=True)
class OpticsConfig:
    """Mask geometry and imaging distances.

    ``b`` is the hole extent along x, ``a`` along y; ``d`` the hole period
    (same on both axes); ``n_slits`` the number of holes per axis; ``f2``
    the mask-to-sensor distance.  ``pixel_pitch`` and ``supersample``
    describe the sensor sampling used for PSF synthesis.
    """

    a: float
    b: float
    d: float
    n_slits: int
    f2: float
    pixel_pitch: float
    supersample: int = 1

    def __post_init__(self):
        if not (0 < self.a <= self.d):
            raise ParameterError(f"need 0 < a <= d, got a={self.a}, d={self.d}")
        if not (0 < self.b <= self.d):
            raise ParameterError(f"need 0 < b <= d, got b={self.b}, d={self.d}")
        if self.f2 <= 0:
            raise ParameterError(f"f2 must be positive, got {self.f2}")
        if self.n_slits < 2:
            raise ParameterError(f"need at least 2 slits per axis, got {self.n_slits}")
        if self.pixel_pitch <= 0:
            raise ParameterError(f"pixel_pitch must be positive, got {self.pixel_pitch}")
        if int(self.supersample) != self.supersample or self.supersample < 1:
            raise ParameterError(f"supersample must be an integer >= 1, got {self.supersample}")

    def first_order_offset(self, lam: float) -> float:
        """Sensor-plane position of the first diffraction order (meters)."""
        return lam * self.f2 / self.d

    def has_even_suppression(self, rel_tol: float = 1e-9) -> bool:
        """True when a = b = d/2, the geometry that cancels even orders."""
        return (math.isclose(self.a, self.d / 2, rel_tol=rel_tol)
                and math.isclose(self.b, self.d / 2, rel_tol=rel_tol))


def pitch_for_dispersion_step(d: float, f2: float, grid: WavelengthGrid,
                              step_px: float = 0.5) -> float:
    """Pixel pitch that makes adjacent bands' first orders ``step_px`` apart."""
    if grid.count < 2:
        raise ParameterError("need at least two bands to define a dispersion step")
    if step_px <= 0:
        raise ParameterError(f"step must be positive, got {step_px}")
    dlam = (grid.lam_max - grid.lam_min) / (grid.count - 1)
    return f2 * dlam / (d * step_px)


@dataclass
class PSFStack:
    """One L1-normalized kernel per band on a common odd-sided pixel grid."""

    grid: WavelengthGrid
    kernels: np.ndarray  # (K, S, S)
    pixel_pitch: float
    order_truncation: int | None

    def __post_init__(self):
        self.kernels = np.asarray(self.kernels, dtype=np.float64)
        if self.kernels.ndim != 3 or self.kernels.shape[1] != self.kernels.shape[2]:
            raise ShapeError(f"kernels must be (K, S, S), got {self.kernels.shape}")
        if self.kernels.shape[0] != self.grid.count:
            raise ShapeError("kernel count does not match wavelength grid")
        if self.kernels.shape[1] % 2 == 0:
            raise ParameterError("kernel side must be odd so the zero order is centered")
        if not np.all(np.isfinite(self.kernels)) or np.any(self.kernels < 0):
            raise NumericError("kernels must be finite and nonnegative")
        sums = self.kernels.sum(axis=(1, 2))
        if np.any(np.abs(sums - 1.0) > _KERNEL_SUM_TOL):
            raise NumericError(f"kernels must sum to 1 +- {_KERNEL_SUM_TOL}")

    @property
    def side(self) -> int:
        return self.kernels.shape[1]

    @property
    def bands(self) -> int:
        return self.kernels.shape[0]


@dataclass
class MaskField:
    """Sampled complex transmission of the aperture plane.

    Samples are cell-centered on a square grid covering ``extent`` meters;
    each sample is the (constant) transmission of its cell, so a binary
    mask whose edges align with cell boundaries is represented exactly.
    ``pattern_px`` marks the side of the centered modulated region, used
    by ``complement_mask``/``open_fraction``.
    """

    transmission: np.ndarray
    extent: float
    pattern_px: int | None = None

    def __post_init__(self):
        self.transmission = np.asarray(self.transmission, dtype=np.complex128)
        if self.transmission.ndim != 2 or self.transmission.shape[0] != self.transmission.shape[1]:
            raise ShapeError(f"transmission must be square, got {self.transmission.shape}")
        if self.extent <= 0:
            raise ParameterError("extent must be positive")
        if np.any(np.abs(self.transmission) > 1 + 1e-12):
            raise ParameterError("|transmission| must not exceed 1")
        if self.pattern_px is not None and not (0 < self.pattern_px <= self.resolution):
            raise ParameterError("pattern_px out of range")

    @property
    def resolution(self) -> int:
        return self.transmission.shape[0]

    @property
    def sample_pitch(self) -> float:
        return self.extent / self.resolution

    def pattern_slice(self) -> slice:
        side = self.pattern_px if self.pattern_px is not None else self.resolution
        lo = (self.resolution - side) // 2
        return slice(lo, lo + side)


# ---------------------------------------------------------------------------
# Closed-form factors
# ---------------------------------------------------------------------------

def diffraction_factor(x, y, lam: float, cfg: OpticsConfig):
    """Single-hole envelope sinc^2(b x / (lam f2)) * sinc^2(a y / (lam f2))."""
    if lam <= 0:
        raise ParameterError("wavelength must be positive")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    sx = np.sinc(cfg.b * x / (lam * cfg.f2))
    sy = np.sinc(cfg.a * y / (lam * cfg.f2))
    out = (sx * sx) * (sy * sy)
    return out if out.ndim else float(out)


def _comb_axis(u, period_over_flam: float, n: int):
    """[sin(N g)/sin(g)]^2 with g = pi*d*u/(lam f2); limit N^2 at maxima."""
    g = np.pi * period_over_flam * np.asarray(u, dtype=np.float64)
    sg = np.sin(g)
    singular = np.abs(sg) < _SINGULARITY_EPS
    safe = np.where(singular, 1.0, sg)
    ratio = np.sin(n * g) / safe
    return np.where(singular, float(n * n), ratio * ratio)


def interference_factor(x, y, lam: float, cfg: OpticsConfig):
    """Multi-slit comb, product over both axes; N^2 limit at each maximum."""
    if lam <= 0:
        raise ParameterError("wavelength must be positive")
    scale = cfg.d / (lam * cfg.f2)
    out = _comb_axis(x, scale, cfg.n_slits) * _comb_axis(y, scale, cfg.n_slits)
    return out if np.ndim(out) else float(out)


def order_amplitude(d_order: int, cfg: OpticsConfig) -> float:
    """Relative intensity of diffraction order D per axis: 1, 4/(D^2 pi^2), 0.

    Only valid for the even-suppression geometry a = b = d/2; other hole
    sizes do not cancel the even orders.
    """
    if d_order < 0 or int(d_order) != d_order:
        raise ParameterError(f"order must be a nonnegative integer, got {d_order}")
    if not cfg.has_even_suppression():
        raise ParameterError(
            "order amplitudes 1 / 4/(D^2 pi^2) / 0 require a = b = d/2; "
            f"got a={cfg.a}, b={cfg.b}, d={cfg.d}")
    if d_order == 0:
        return 1.0
    if d_order % 2 == 0:
        return 0.0
    return 4.0 / (d_order * d_order * math.pi * math.pi)


def zero_first_ratio(m: float) -> float:
    """First-to-zero order intensity ratio [(m/pi) sin(pi/m)]^2, m = d/b."""
    if m < 1:
        raise ParameterError(f"aperture ratio d/b must be >= 1, got {m}")
    return (m / math.pi * math.sin(math.pi / m)) ** 2


def dispersion_distance(cfg: OpticsConfig, grid: WavelengthGrid) -> float:
    """Sensor-plane spread of the first order across the band range (m)."""
    return cfg.f2 * (grid.lam_max - grid.lam_min) / cfg.d


# ---------------------------------------------------------------------------
# Pixel-grid sampling shared by both PSF paths
# ---------------------------------------------------------------------------

def _fine_positions(side: int, pitch: float, supersample: int) -> np.ndarray:
    """Supersampled sensor positions (m), s samples per pixel, centered."""
    s = int(supersample)
    u = np.arange(side * s, dtype=np.float64)
    return (u - (side // 2) * s - (s - 1) / 2.0) * (pitch / s)


def _box_average(fine: np.ndarray, side: int, supersample: int) -> np.ndarray:
    s = int(supersample)
    return fine.reshape(side, s, side, s).mean(axis=(1, 3))


def _truncation_cut(pos: np.ndarray, lam: float, cfg: OpticsConfig,
                    order_truncation: int | None) -> np.ndarray:
    """1-D keep-mask: drop samples beyond (T + 1/2) first-order offsets."""
    if order_truncation is None:
        return np.ones_like(pos, dtype=bool)
    cut = (order_truncation + 0.5) * cfg.first_order_offset(lam)
    return np.abs(pos) <= cut


def psf_analytic(lam: float, cfg: OpticsConfig, side: int,
                 order_truncation: int | None = 3) -> np.ndarray:
    """Closed-form PSF sampled at (supersampled) pixel centers, sum = 1.

    Energy beyond ``order_truncation`` diffraction orders (on either axis)
    is dropped before normalization.
    """
    if side % 2 == 0:
        raise ParameterError(f"side must be odd, got {side}")
    if lam <= 0:
        raise ParameterError("wavelength must be positive")
    pos = _fine_positions(side, cfg.pixel_pitch, cfg.supersample)
    scale = cfg.d / (lam * cfg.f2)
    keep = _truncation_cut(pos, lam, cfg, order_truncation)
    px = np.sinc(cfg.b * pos / (lam * cfg.f2)) ** 2 * _comb_axis(pos, scale, cfg.n_slits) * keep
    py = np.sinc(cfg.a * pos / (lam * cfg.f2)) ** 2 * _comb_axis(pos, scale, cfg.n_slits) * keep
    fine = np.outer(py, px)
    kernel = _box_average(fine, side, cfg.supersample)
    total = kernel.sum()
    if total <= 0:
        raise NumericError("analytic PSF has no energy inside the window")
    return kernel / total


# ---------------------------------------------------------------------------
# Mask construction
# ---------------------------------------------------------------------------

def square_hole_mask(cfg: OpticsConfig, samples_per_period: int = 32,
                     margin_factor: float = 2.0) -> MaskField:
    """Sample the N x N hole array with an opaque margin around it.

    ``samples_per_period`` cells span one period ``d``; hole edges land on
    cell boundaries whenever b/d and a/d are multiples of 1/samples_per_period
    (true for the canonical a = b = d/2 with an even count), which makes the
    numeric propagation of this mask exact.
    """
    q = int(samples_per_period)
    if q < 4:
        raise ParameterError("need at least 4 samples per period")
    if margin_factor < 1.0:
        raise ParameterError("margin_factor must be >= 1")
    pattern_px = cfg.n_slits * q
    m_total = int(round(pattern_px * margin_factor))
    m_total += m_total % 2  # keep it even so the pattern centers cleanly
    delta = cfg.d / q

    def axis_profile(opening: float) -> np.ndarray:
        cells = np.zeros(pattern_px, dtype=np.float64)
        width = int(round(opening / cfg.d * q))
        width = max(1, min(width, q))
        start = (q - width) // 2
        for n in range(cfg.n_slits):
            cells[n * q + start: n * q + start + width] = 1.0
        return cells

    open_x = axis_profile(cfg.b)
    open_y = axis_profile(cfg.a)
    pattern = np.outer(open_y, open_x)
    t = np.zeros((m_total, m_total), dtype=np.complex128)
    lo = (m_total - pattern_px) // 2
    t[lo:lo + pattern_px, lo:lo + pattern_px] = pattern
    return MaskField(transmission=t, extent=m_total * delta, pattern_px=pattern_px)


def open_mask(cfg: OpticsConfig, samples_per_period: int = 32,
              margin_factor: float = 2.0) -> MaskField:
    """Fully transparent modulation region (no holes); same framing."""
    base = square_hole_mask(cfg, samples_per_period, margin_factor)
    t = np.zeros_like(base.transmission)
    sl = base.pattern_slice()
    t[sl, sl] = 1.0
    return MaskField(transmission=t, extent=base.extent, pattern_px=base.pattern_px)


def complement_mask(mask: MaskField) -> MaskField:
    """Babinet complement: flip transmission inside the modulated region."""
    if np.any(np.abs(mask.transmission.imag) > 0):
        raise ParameterError("complement is defined for real amplitude masks only")
    t = mask.transmission.copy()
    sl = mask.pattern_slice()
    t[sl, sl] = 1.0 - t[sl, sl]
    return MaskField(transmission=t, extent=mask.extent, pattern_px=mask.pattern_px)


def open_fraction(mask: MaskField) -> float:
    """Mean |transmission| over the modulated region."""
    sl = mask.pattern_slice()
    return float(np.mean(np.abs(mask.transmission[sl, sl])))


def translate_mask(mask: MaskField, px: float, py: float) -> MaskField:
    """Shift the sampled transmission by the nearest whole-cell offset.

    Intended for robustness probes; the shift must stay well inside the
    opaque margin so no transmission wraps around the field edge.
    """
    bound = mask.extent / 4
    if abs(px) >= bound or abs(py) >= bound:
        raise ParameterError(
            f"shift ({px}, {py}) exceeds extent/4 = {bound:.3e} m")
    delta = mask.sample_pitch
    sx = int(round(px / delta))
    sy = int(round(py / delta))
    t = np.roll(mask.transmission, (sy, sx), axis=(0, 1))
    return MaskField(transmission=t, extent=mask.extent, pattern_px=mask.pattern_px)


# ---------------------------------------------------------------------------
# Numeric Fraunhofer propagation
# ---------------------------------------------------------------------------

def _dtft_2d(samples: np.ndarray, delta: float, freqs: np.ndarray) -> np.ndarray:
    """Evaluate sum_mn t[m,n] e^{-2i pi (fy m + fx n) delta} on freqs x freqs."""
    from scipy.signal import czt

    m = freqs.size
    if m == 1:
        phase = np.exp(-2j * np.pi * freqs[0] * delta * np.arange(samples.shape[0]))
        return np.array([[phase @ samples @ phase]])
    df = freqs[1] - freqs[0]
    w = np.exp(-2j * np.pi * df * delta)
    a = np.exp(2j * np.pi * freqs[0] * delta)
    out = czt(samples, m=m, w=w, a=a, axis=1)
    return czt(out, m=m, w=w, a=a, axis=0)


def _required_resolution(mask: MaskField, cfg: OpticsConfig, lam: float, side: int) -> int:
    pos = _fine_positions(side, cfg.pixel_pitch, cfg.supersample)
    f_max = np.abs(pos).max() / (lam * cfg.f2)
    return int(math.ceil(2.0 * f_max * mask.extent))


def fraunhofer_intensity(lam: float, mask: MaskField, cfg: OpticsConfig,
                         side: int) -> np.ndarray:
    """Far-field intensity of the mask on the pixel grid, arbitrary units.

    The mask's DTFT is evaluated exactly at the supersampled pixel
    frequencies and corrected by the per-cell sinc envelope, then
    box-averaged to pixels.  No truncation, no normalization: this is the
    raw oracle used for cross-checks.
    """
    if side % 2 == 0:
        raise ParameterError(f"side must be odd, got {side}")
    if lam <= 0:
        raise ParameterError("wavelength must be positive")
    need = _required_resolution(mask, cfg, lam, side)
    if mask.resolution < need:
        raise SamplingError(
            f"mask resolution {mask.resolution} is below the alias-free "
            f"minimum {need} for this field of view; increase the mask "
            f"sampling or shrink side/pixel_pitch")
    pos = _fine_positions(side, cfg.pixel_pitch, cfg.supersample)
    freqs = pos / (lam * cfg.f2)
    delta = mask.sample_pitch
    field = _dtft_2d(mask.transmission, delta, freqs)
    cell = np.sinc(delta * freqs)
    field *= np.outer(cell, cell)
    fine = (field.real ** 2 + field.imag ** 2)
    return _box_average(fine, side, cfg.supersample)


def psf_numeric(lam: float, mask: MaskField, cfg: OpticsConfig, side: int,
                order_truncation: int | None = None) -> np.ndarray:
    """Normalized PSF from the sampled-mask Fraunhofer oracle."""
    kernel = fraunhofer_intensity(lam, mask, cfg, side)
    if order_truncation is not None:
        centers = _fine_positions(side, cfg.pixel_pitch, 1)
        keep = _truncation_cut(centers, lam, cfg, order_truncation)
        kernel = kernel * np.outer(keep, keep)
    total = kernel.sum()
    if total <= 0:
        raise NumericError("numeric PSF has no energy inside the window")
    return kernel / total


def depth_psf(mask: MaskField, cfg: OpticsConfig, z: float, lam: float,
              side: int, order_truncation: int | None = None) -> np.ndarray:
    """PSF for a point source at depth ``z`` instead of a plane wave.

    The incident spherical wave adds the phase k (xi - z) across the mask,
    xi = sqrt(xm^2 + ym^2 + z^2); computed as r^2/(xi + z) to stay accurate
    at optical infinity.
    """
    if z <= cfg.f2:
        raise ParameterError(f"source depth {z} must exceed f2 = {cfg.f2}")
    m = mask.resolution
    delta = mask.sample_pitch
    coords = (np.arange(m) - (m - 1) / 2.0) * delta
    r2 = coords[:, None] ** 2 + coords[None, :] ** 2
    xi = np.sqrt(r2 + z * z)
    phase = (2 * np.pi / lam) * (r2 / (xi + z))
    lit = MaskField(transmission=mask.transmission * np.exp(1j * phase),
                    extent=mask.extent, pattern_px=mask.pattern_px)
    return psf_numeric(lam, lit, cfg, side, order_truncation)


# ---------------------------------------------------------------------------
# PSF stacks
# ---------------------------------------------------------------------------

def _worker_count() -> int:
    try:
        n = int(os.environ.get("ADIS_THREADS", "1"))
    except ValueError:
        n = 1
    return max(1, n)


def min_side_for(cfg: OpticsConfig, grid: WavelengthGrid,
                 order_truncation: int | None = 3) -> int:
    """Smallest odd side containing the truncation order at lam_max."""
    orders = order_truncation if order_truncation is not None else 1
    reach = orders * cfg.first_order_offset(grid.lam_max) / cfg.pixel_pitch
    return 2 * int(math.ceil(reach)) + 1


def build_psf_stack(cfg: OpticsConfig, grid: WavelengthGrid, side: int,
                    order_truncation: int | None = 3) -> PSFStack:
    """One analytic PSF per band; parallel over bands, deterministic order."""
    if side % 2 == 0:
        raise ParameterError(f"side must be odd, got {side}")
    need = min_side_for(cfg, grid, order_truncation)
    if side < need:
        raise ParameterError(
            f"side {side} cannot contain {order_truncation} diffraction "
            f"orders at lam_max; need side >= {need}")

    def synth(lam: float) -> np.ndarray:
        return psf_analytic(lam, cfg, side, order_truncation)

    workers = _worker_count()
    lams = [float(v) for v in grid.lambdas]
    if workers == 1 or grid.count == 1:
        kernels = [synth(lam) for lam in lams]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            kernels = list(pool.map(synth, lams))
    return PSFStack(grid=grid, kernels=np.stack(kernels), pixel_pitch=cfg.pixel_pitch,
                    order_truncation=order_truncation)


def first_order_centroids(stack: PSFStack, cfg: OpticsConfig) -> np.ndarray:
    """Sub-pixel x-centroid (pixels from center) of each band's +x first order.

    The centroid is taken over a quarter-order window around the nominal
    first-order column (wide enough for the lobe, narrow enough that the
    envelope slope barely biases it), using rows within the same distance
    of the axis.
    """
    s = stack.side
    c = s // 2
    cols = np.arange(s, dtype=np.float64) - c
    out = np.empty(stack.bands)
    for k, lam in enumerate(stack.grid.lambdas):
        x1 = cfg.first_order_offset(float(lam)) / stack.pixel_pitch
        col_keep = np.abs(cols - x1) <= x1 / 4
        row_half = max(1, int(round(x1 / 4)))
        rows = slice(max(0, c - row_half), min(s, c + row_half + 1))
        patch = stack.kernels[k][rows][:, col_keep]
        weights = patch.sum(axis=0)
        total = weights.sum()
        if total <= 0:
            raise NumericError(f"no first-order energy found for band {k}")
        out[k] = float((weights * cols[col_keep]).sum() / total)
    return out


def dispersion_step_report(stack: PSFStack, cfg: OpticsConfig) -> np.ndarray:
    """Adjacent-band first-order centroid separations, in pixels."""
    return np.diff(first_order_centroids(stack, cfg))

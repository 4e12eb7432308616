"""Shared spectral-domain types and image-quality metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, ShapeError

PSNR_CAP_DB = 99.0

# Standard SSIM stabilizers.
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class WavelengthGrid:
    """Strictly increasing wavelengths in meters."""

    lambdas: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=np.float64)
        object.__setattr__(self, "lambdas", lam)
        if lam.ndim != 1 or lam.size < 1:
            raise ShapeError("wavelength grid must be a non-empty 1-D array")
        if np.any(lam <= 0):
            raise ParameterError("wavelengths must be positive")
        if lam.size > 1 and not np.all(np.diff(lam) > 0):
            raise ParameterError("wavelengths must be strictly increasing")

    @classmethod
    def linspace(cls, lo: float, hi: float, count: int) -> "WavelengthGrid":
        if count == 1:
            return cls(np.array([lo], dtype=np.float64))
        return cls(np.linspace(lo, hi, count))

    @property
    def count(self) -> int:
        return int(self.lambdas.size)

    @property
    def lam_min(self) -> float:
        return float(self.lambdas[0])

    @property
    def lam_max(self) -> float:
        return float(self.lambdas[-1])


@dataclass
class HSICube:
    """H x W x K radiance cube on an explicit wavelength grid.

    Values are nonnegative in arbitrary linear units; the third axis
    indexes ``grid``.
    """

    data: np.ndarray
    grid: WavelengthGrid

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise ShapeError(f"cube must be 3-D, got shape {self.data.shape}")
        if self.data.shape[2] != self.grid.count:
            raise ShapeError(
                f"cube has {self.data.shape[2]} bands but grid has {self.grid.count}"
            )
        if not np.all(np.isfinite(self.data)):
            raise ShapeError("cube contains non-finite values")
        if np.any(self.data < 0):
            raise ShapeError("cube contains negative radiance")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def bands(self) -> int:
        return self.data.shape[2]


@dataclass
class Measurement:
    """Single 2-D sensor readout (nonnegative, finite)."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ShapeError(f"measurement must be 2-D, got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ShapeError("measurement contains non-finite values")
        if np.any(self.data < 0):
            raise ShapeError("measurement contains negative values")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass
class QualityReport:
    """PSNR/SSIM pair plus the metric settings used to compute them."""

    psnr_db: float
    ssim: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.ssim > 1.0 + 1e-12:
            raise ParameterError(f"ssim {self.ssim} exceeds 1")
        if self.psnr_db > PSNR_CAP_DB:
            raise ParameterError(f"psnr {self.psnr_db} exceeds the {PSNR_CAP_DB} dB cap")


def _as_array(x) -> np.ndarray:
    if isinstance(x, (HSICube, Measurement)):
        return x.data
    return np.asarray(x, dtype=np.float64)


def psnr(reference, test, peak: float | None = None) -> float:
    """Peak signal-to-noise ratio in dB.

    The peak defaults to the reference maximum (not a fixed 1.0), so
    normalized and unnormalized cubes are scored consistently; pass it
    explicitly to compare shifted pairs under a fixed range.  Identical
    inputs return the 99 dB cap.
    """
    ref = _as_array(reference)
    tst = _as_array(test)
    if ref.shape != tst.shape:
        raise ShapeError(f"shape mismatch: {ref.shape} vs {tst.shape}")
    if peak is None:
        peak = float(ref.max())
    if peak <= 0:
        raise ParameterError("reference peak must be positive")
    mse = float(np.mean((ref - tst) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(peak * peak / mse))


def ssim(reference, test, window: int = 7, data_range: float | None = None) -> float:
    """Mean local SSIM over all fully-contained windows.

    Uses uniform (box) windows and plain (biased) moments, with the
    standard stabilizers k1=0.01, k2=0.03.  ``data_range`` defaults to
    the reference max-min; pass it explicitly to compare shifted pairs
    under a fixed range.
    """
    from scipy.ndimage import uniform_filter

    ref = _as_array(reference)
    tst = _as_array(test)
    if ref.shape != tst.shape:
        raise ShapeError(f"shape mismatch: {ref.shape} vs {tst.shape}")
    if ref.ndim != 2:
        raise ShapeError("ssim expects 2-D images")
    if window % 2 == 0 or window < 1:
        raise ParameterError(f"window must be odd and positive, got {window}")
    if window > min(ref.shape):
        raise ParameterError(
            f"window {window} larger than image {ref.shape}"
        )
    if data_range is None:
        data_range = float(ref.max() - ref.min())
        if data_range == 0.0:
            data_range = 1.0  # constant reference: fall back to a unit range

    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2

    def box(a):
        r = window // 2
        return uniform_filter(a, size=window, mode="constant")[r:-r or None, r:-r or None]

    mu_r = box(ref)
    mu_t = box(tst)
    var_r = box(ref * ref) - mu_r * mu_r
    var_t = box(tst * tst) - mu_t * mu_t
    cov = box(ref * tst) - mu_r * mu_t

    num = (2 * mu_r * mu_t + c1) * (2 * cov + c2)
    den = (mu_r**2 + mu_t**2 + c1) * (var_r + var_t + c2)
    return float(np.mean(num / den))


def quality_report(reference, test, window: int = 7,
                   data_range: float | None = None) -> QualityReport:
    """PSNR + SSIM between two cubes or measurements.

    For cubes the SSIM is the mean of per-band 2-D SSIMs; PSNR is taken
    over the full volume.
    """
    ref = _as_array(reference)
    tst = _as_array(test)
    if ref.shape != tst.shape:
        raise ShapeError(f"shape mismatch: {ref.shape} vs {tst.shape}")
    if ref.ndim == 3:
        rng = data_range if data_range is not None else float(ref.max() - ref.min()) or 1.0
        ssim_val = float(np.mean([
            ssim(ref[:, :, k], tst[:, :, k], window=window, data_range=rng)
            for k in range(ref.shape[2])
        ]))
    else:
        ssim_val = ssim(ref, tst, window=window, data_range=data_range)
    return QualityReport(
        psnr_db=psnr(ref, tst),
        ssim=min(ssim_val, 1.0),
        meta={"ssim_window": window, "ssim_k1": SSIM_K1, "ssim_k2": SSIM_K2,
              "ssim_window_kind": "box", "data_range": data_range,
              "psnr_peak": "reference-max"},
    )

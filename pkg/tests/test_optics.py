import math

import numpy as np
import pytest

from adisim.errors import NumericError, ParameterError, SamplingError
from adisim.spectral import WavelengthGrid
from adisim.optics import (
    MaskField,
    OpticsConfig,
    build_psf_stack,
    complement_mask,
    depth_psf,
    diffraction_factor,
    dispersion_distance,
    dispersion_step_report,
    first_order_centroids,
    fraunhofer_intensity,
    interference_factor,
    min_side_for,
    open_fraction,
    open_mask,
    order_amplitude,
    pitch_for_dispersion_step,
    psf_analytic,
    psf_numeric,
    square_hole_mask,
    translate_mask,
    zero_first_ratio,
)

LAM = 550e-9


def even_cfg(n_slits=16, pitch=None, supersample=4):
    """Canonical a = b = d/2 geometry; default pitch puts order 1 at 8 px."""
    f2, d = 50e-3, 10e-6
    if pitch is None:
        pitch = LAM * f2 / d / 8
    return OpticsConfig(a=5e-6, b=5e-6, d=d, n_slits=n_slits, f2=f2,
                        pixel_pitch=pitch, supersample=supersample)


def rel_l2(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


class TestConfig:
    def test_rejects_hole_wider_than_period(self):
        with pytest.raises(ParameterError):
            OpticsConfig(a=11e-6, b=5e-6, d=10e-6, n_slits=4, f2=0.05,
                         pixel_pitch=1e-5)

    def test_rejects_single_slit(self):
        with pytest.raises(ParameterError):
            OpticsConfig(a=5e-6, b=5e-6, d=10e-6, n_slits=1, f2=0.05,
                         pixel_pitch=1e-5)

    def test_first_order_offset(self):
        cfg = even_cfg()
        assert cfg.first_order_offset(LAM) == pytest.approx(LAM * cfg.f2 / cfg.d)


class TestDiffractionFactor:
    def test_origin_is_one(self):
        cfg = even_cfg()
        for lam in (450e-9, 550e-9, 650e-9):
            assert diffraction_factor(0.0, 0.0, lam, cfg) == 1.0

    def test_first_sinc_zero(self):
        cfg = even_cfg()
        x = LAM * cfg.f2 / cfg.b
        assert diffraction_factor(x, 0.0, LAM, cfg) == pytest.approx(0.0, abs=1e-30)

    def test_matches_scalar_reevaluation(self):
        cfg = even_cfg()
        rng = np.random.default_rng(0)
        for _ in range(20):
            x, y = rng.uniform(-5e-3, 5e-3, 2)
            ux = math.pi * cfg.b * x / (LAM * cfg.f2)
            uy = math.pi * cfg.a * y / (LAM * cfg.f2)
            sx = math.sin(ux) / ux if ux else 1.0
            sy = math.sin(uy) / uy if uy else 1.0
            want = (sx * sy) ** 2
            assert diffraction_factor(x, y, LAM, cfg) == pytest.approx(want, rel=1e-12)


class TestInterferenceFactor:
    def test_origin_is_n4(self):
        cfg = even_cfg()
        n4 = cfg.n_slits ** 4
        assert interference_factor(0.0, 0.0, LAM, cfg) == n4

    def test_first_order_maximum_is_n4(self):
        cfg = even_cfg()
        x1 = cfg.first_order_offset(LAM)
        assert interference_factor(x1, 0.0, LAM, cfg) == cfg.n_slits ** 4

    @pytest.mark.parametrize("eps", [1e-9, -1e-9])
    def test_limit_continuity_near_maximum(self, eps):
        cfg = even_cfg()
        x = (1 + eps) * cfg.first_order_offset(LAM)
        n2 = cfg.n_slits ** 2
        axis = interference_factor(x, 0.0, LAM, cfg) / n2  # y axis contributes n^2
        assert abs(axis - n2) / n2 < 1e-4


class TestOrderMath:
    def test_order_amplitudes(self):
        cfg = even_cfg()
        assert order_amplitude(0, cfg) == 1.0
        assert order_amplitude(1, cfg) == pytest.approx(4 / math.pi**2, abs=1e-12)
        assert order_amplitude(2, cfg) == 0.0
        assert order_amplitude(3, cfg) == pytest.approx(4 / (9 * math.pi**2), abs=1e-12)
        assert order_amplitude(4, cfg) == 0.0

    def test_geometry_precondition(self):
        cfg = OpticsConfig(a=4e-6, b=5e-6, d=10e-6, n_slits=4, f2=0.05,
                           pixel_pitch=1e-5)
        with pytest.raises(ParameterError, match="a = b = d/2"):
            order_amplitude(1, cfg)

    def test_negative_order_rejected(self):
        with pytest.raises(ParameterError):
            order_amplitude(-1, even_cfg())

    def test_zero_first_ratio_matches_first_order(self):
        cfg = even_cfg()
        assert zero_first_ratio(2.0) == pytest.approx(order_amplitude(1, cfg), abs=1e-12)

    def test_zero_first_ratio_edge_cases(self):
        assert zero_first_ratio(1.0) == pytest.approx(0.0, abs=1e-30)
        assert abs(zero_first_ratio(1e6) - 1.0) < 1e-10
        with pytest.raises(ParameterError):
            zero_first_ratio(0.5)


class TestDispersionDistance:
    def test_reference_value_is_one_mm(self):
        cfg = even_cfg()
        grid = WavelengthGrid.linspace(450e-9, 650e-9, 28)
        assert dispersion_distance(cfg, grid) == pytest.approx(1.0e-3, rel=1e-12)

    def test_degenerate_grid(self):
        cfg = even_cfg()
        grid = WavelengthGrid.linspace(550e-9, 550e-9, 1)
        assert dispersion_distance(cfg, grid) == 0.0

    def test_linearity_in_f2(self):
        grid = WavelengthGrid.linspace(450e-9, 650e-9, 8)
        c1 = even_cfg()
        c2 = OpticsConfig(a=c1.a, b=c1.b, d=c1.d, n_slits=c1.n_slits,
                          f2=2 * c1.f2, pixel_pitch=c1.pixel_pitch)
        assert dispersion_distance(c2, grid) == pytest.approx(
            2 * dispersion_distance(c1, grid), rel=1e-12)


class TestMaskField:
    def test_transmission_bound(self):
        with pytest.raises(ParameterError):
            MaskField(transmission=2.0 * np.ones((8, 8)), extent=1e-3)

    def test_open_fractions_exact(self):
        mask = square_hole_mask(even_cfg(), samples_per_period=32)
        assert open_fraction(mask) == 0.25
        assert open_fraction(complement_mask(mask)) == 0.75

    def test_complement_is_involution(self):
        mask = square_hole_mask(even_cfg(n_slits=4), samples_per_period=8)
        back = complement_mask(complement_mask(mask))
        assert np.array_equal(back.transmission, mask.transmission)


class TestPsfAnalytic:
    def test_even_side_rejected(self):
        with pytest.raises(ParameterError):
            psf_analytic(LAM, even_cfg(), 10)

    def test_center_is_global_max(self):
        cfg = even_cfg()
        k = psf_analytic(LAM, cfg, 33)
        assert np.argmax(k) == (33 // 2) * 33 + 33 // 2

    def test_normalized(self):
        k = psf_analytic(LAM, even_cfg(), 61)
        assert abs(k.sum() - 1.0) < 1e-9
        assert np.all(k >= 0)

    def test_even_orders_suppressed_at_lattice(self):
        # Orders land on pixel centers (order 1 at 8 px); point sampling
        # at the lattice shows the even-order cancellation directly.
        cfg = even_cfg(supersample=1)
        k = psf_analytic(LAM, cfg, 81, order_truncation=None)
        c = 81 // 2
        first = k[c, c + 8]
        for d_even in (2, 4):
            assert k[c, c + 8 * d_even] < 1e-6 * first

    def test_box_energy_ratio_matches_numeric(self):
        cfg = even_cfg()
        mask = square_hole_mask(cfg, samples_per_period=32)
        side = 61
        ka = psf_analytic(LAM, cfg, side, order_truncation=None)
        kn = psf_numeric(LAM, mask, cfg, side)
        c = side // 2
        r = int(round(1.5 * cfg.first_order_offset(LAM) / cfg.pixel_pitch))
        box = np.s_[c - r:c + r + 1, c - r:c + r + 1]
        assert ka[box].sum() == pytest.approx(kn[box].sum(), abs=1e-3)


class TestPsfNumeric:
    def test_cross_oracle_agreement(self):
        cfg = even_cfg()
        mask = square_hole_mask(cfg, samples_per_period=32)
        for lam in np.linspace(450e-9, 650e-9, 3):
            ka = psf_analytic(lam, cfg, 61, order_truncation=None)
            kn = psf_numeric(lam, mask, cfg, 61)
            assert rel_l2(ka, kn) < 1e-3

    def test_open_mask_single_lobe(self):
        cfg = even_cfg()
        mask = open_mask(cfg, samples_per_period=32)
        k = psf_numeric(LAM, mask, cfg, 33)
        c = 33 // 2
        assert np.argmax(k) == c * 33 + c
        # energy concentrated at the center lobe
        assert k[c, c] > 0.5

    def test_undersampled_mask_reports_minimum(self):
        cfg = even_cfg()
        mask = square_hole_mask(cfg, samples_per_period=4, margin_factor=1.0)
        with pytest.raises(SamplingError, match="minimum"):
            fraunhofer_intensity(LAM, mask, cfg, 161)

    def test_babinet_off_center_lobes(self):
        # Fine grid steps of one order/n_slits make the direct-beam window
        # term vanish at every sample except dead center.
        cfg = even_cfg(pitch=LAM * 50e-3 / 10e-6 / 16, supersample=1)
        mask = square_hole_mask(cfg, samples_per_period=32)
        comp = complement_mask(mask)
        side = 129
        ra = fraunhofer_intensity(LAM, mask, cfg, side)
        rc = fraunhofer_intensity(LAM, comp, cfg, side)
        c = side // 2
        pos = (np.arange(side) - c) * cfg.pixel_pitch
        x1 = cfg.first_order_offset(LAM)
        inside = (np.abs(pos)[None, :] <= 0.5 * x1) & (np.abs(pos)[:, None] <= 0.5 * x1)
        off = ~inside
        assert np.linalg.norm((ra - rc)[off]) / np.linalg.norm(ra[off]) < 1e-6


class TestTranslateMask:
    def test_zero_shift_identity(self):
        mask = square_hole_mask(even_cfg(n_slits=4), samples_per_period=8)
        out = translate_mask(mask, 0.0, 0.0)
        assert np.array_equal(out.transmission, mask.transmission)

    def test_psf_invariance(self):
        cfg = even_cfg()
        mask = square_hole_mask(cfg, samples_per_period=32)
        base = psf_numeric(LAM, mask, cfg, 61)
        for px, py in [(5e-6, 0.0), (0.0, -5e-6), (3.1e-6, 4.9e-6)]:
            moved = psf_numeric(LAM, translate_mask(mask, px, py), cfg, 61)
            assert rel_l2(moved, base) < 1e-6

    def test_round_trip(self):
        mask = square_hole_mask(even_cfg(n_slits=4), samples_per_period=8)
        there = translate_mask(mask, 7e-6, -3e-6)
        back = translate_mask(there, -7e-6, 3e-6)
        assert np.array_equal(back.transmission, mask.transmission)

    def test_shift_bound(self):
        mask = square_hole_mask(even_cfg(n_slits=4), samples_per_period=8)
        with pytest.raises(ParameterError):
            translate_mask(mask, mask.extent / 2, 0.0)


class TestDepthPsf:
    def test_depth_must_exceed_f2(self):
        cfg = even_cfg()
        mask = square_hole_mask(cfg, samples_per_period=32)
        with pytest.raises(ParameterError):
            depth_psf(mask, cfg, cfg.f2, LAM, 33)

    def test_optical_infinity_matches_plane_wave(self):
        cfg = even_cfg()
        mask = square_hole_mask(cfg, samples_per_period=32)
        plane = psf_numeric(LAM, mask, cfg, 61)
        far = depth_psf(mask, cfg, 1e6 * cfg.f2, LAM, 61)
        assert rel_l2(far, plane) < 1e-6

    def test_depth_ladder_non_increasing(self):
        cfg = even_cfg()
        mask = square_hole_mask(cfg, samples_per_period=32)
        plane = psf_numeric(LAM, mask, cfg, 61)
        devs = [rel_l2(depth_psf(mask, cfg, m * cfg.f2, LAM, 61), plane)
                for m in (10, 100, 1000, 10000)]
        assert devs[1] < 0.01  # Z = 100 f2 within 1%
        for lo, hi in zip(devs[1:], devs[:-1]):
            assert lo <= hi + 1e-12


class TestPsfStack:
    def test_single_band_stack(self):
        cfg = even_cfg()
        grid = WavelengthGrid.linspace(550e-9, 550e-9, 1)
        stack = build_psf_stack(cfg, grid, 61)
        assert stack.bands == 1
        assert abs(stack.kernels[0].sum() - 1.0) < 1e-9

    def test_all_kernels_normalized(self):
        cfg = even_cfg()
        grid = WavelengthGrid.linspace(450e-9, 650e-9, 5)
        stack = build_psf_stack(cfg, grid, 91)
        assert np.all(np.abs(stack.kernels.sum(axis=(1, 2)) - 1.0) < 1e-9)

    def test_too_small_side_reports_minimum(self):
        cfg = even_cfg()
        grid = WavelengthGrid.linspace(450e-9, 650e-9, 5)
        need = min_side_for(cfg, grid, 3)
        with pytest.raises(ParameterError, match=str(need)):
            build_psf_stack(cfg, grid, need - 2)

    def test_paper_ratio_dispersion_step(self):
        grid = WavelengthGrid.linspace(450e-9, 650e-9, 28)
        pitch = pitch_for_dispersion_step(10e-6, 50e-3, grid, 0.5)
        cfg = OpticsConfig(a=5e-6, b=5e-6, d=10e-6, n_slits=4, f2=50e-3,
                           pixel_pitch=pitch, supersample=2)
        stack = build_psf_stack(cfg, grid, 311, order_truncation=3)
        steps = dispersion_step_report(stack, cfg)
        assert np.all(np.abs(steps - 0.5) <= 0.25)

    def test_centroids_track_nominal_positions(self):
        grid = WavelengthGrid.linspace(450e-9, 650e-9, 6)
        pitch = pitch_for_dispersion_step(10e-6, 50e-3, grid, 2.0)
        cfg = OpticsConfig(a=5e-6, b=5e-6, d=10e-6, n_slits=4, f2=50e-3,
                           pixel_pitch=pitch, supersample=2)
        stack = build_psf_stack(cfg, grid, min_side_for(cfg, grid, 1) + 12,
                                order_truncation=1)
        cents = first_order_centroids(stack, cfg)
        nominal = np.array([cfg.first_order_offset(l) / pitch for l in grid.lambdas])
        # The sinc^2 envelope slope biases the centroid slightly inward.
        assert np.all(np.abs(cents - nominal) < 0.75)

import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase, tag

from attack.otsu import otsu_estimate
from attack.services import p_error
from cdpbench.exceptions import DimensionError, FormatError, ParameterError
from patterns.models import BinaryTemplate
from patterns.services import generate_template
from .calibration import JITTER_RANGE, calibrate_jitter, mean_otsu_error, printer_preset
from .models import PRINTER_PROFILES, ChannelParams, GrayImage
from .services import (
    block_means, downscale, find_shift, load_gray, place_dots, register, save_gray,
    simulate_print_scan, translate, upsample,
)


class ChannelTests(SimpleTestCase):
    def test_degenerate_channel_returns_upsampled_template(self):
        t = generate_template(16, 16, 0.5, seed=1)
        params = ChannelParams(pps=4, psf_sigma=1e-6, dot_gain=0.0, noise_std=0.0)
        x = simulate_print_scan(t, params)
        self.assertTrue(np.allclose(x.pixels, upsample(t, 4).pixels, atol=1e-9))

    def test_same_params_same_scan(self):
        t = generate_template(16, 16, 0.5, seed=2)
        params = printer_preset('P55')
        a = simulate_print_scan(t, params)
        b = simulate_print_scan(t, params)
        self.assertTrue(np.array_equal(a.pixels, b.pixels))
        self.assertEqual(a.shape, (128, 128))

    def test_intensities_stay_in_unit_range(self):
        t = generate_template(16, 16, 0.5, seed=3)
        x = simulate_print_scan(t, ChannelParams(pps=4, gain=1.5, offset=-0.2, noise_std=0.3))
        self.assertGreaterEqual(x.pixels.min(), 0.0)
        self.assertLessEqual(x.pixels.max(), 1.0)

    def test_positive_dot_gain_darkens(self):
        t = generate_template(32, 32, 0.5, seed=4)
        means = []
        for dot_gain in (-0.2, 0.0, 0.1, 0.2):
            x = simulate_print_scan(t, ChannelParams(pps=8, dot_gain=dot_gain, noise_std=0.0))
            means.append(x.pixels.mean())
        self.assertEqual(means, sorted(means, reverse=True))

    def test_all_white_template_stays_white(self):
        t = BinaryTemplate(bits=np.ones((16, 16), dtype=np.uint8), density=0.0)
        x = simulate_print_scan(t, ChannelParams(pps=4, dot_gain=0.2, noise_std=0.0))
        self.assertTrue(np.allclose(x.pixels, 1.0))

    def test_rejects_out_of_range_parameters(self):
        for kwargs in ({'psf_sigma': 0.0}, {'dot_gain': 0.6}, {'noise_std': -0.1}, {'pps': 0}):
            with self.assertRaises(ParameterError):
                ChannelParams(**kwargs)

    def test_otsu_error_grows_with_noise(self):
        base = ChannelParams(pps=8, psf_sigma=0.6, dot_gain=0.05)
        errors = [mean_otsu_error(ChannelParams(**{**base.as_dict(), 'noise_std': s}))
                  for s in (0.0, 0.1, 0.3)]
        self.assertLessEqual(errors[0], errors[1] + 0.5)
        self.assertLessEqual(errors[1], errors[2] + 0.5)
        self.assertLess(errors[0], errors[2])

    def test_otsu_error_grows_with_dot_gain(self):
        low = mean_otsu_error(ChannelParams(pps=8, psf_sigma=0.6, dot_gain=0.0, noise_std=0.02))
        high = mean_otsu_error(ChannelParams(pps=8, psf_sigma=0.6, dot_gain=0.25, noise_std=0.02))
        self.assertLess(low, high)

    def test_jitter_is_seeded_and_moves_ink(self):
        t = generate_template(16, 16, 0.5, seed=11)
        params = ChannelParams(pps=8, psf_sigma=0.25, dot_gain=0.0, noise_std=0.0, jitter=0.3, seed=4)
        a = simulate_print_scan(t, params)
        self.assertTrue(np.array_equal(a.pixels, simulate_print_scan(t, params).pixels))
        still = simulate_print_scan(t, ChannelParams(**{**params.as_dict(), 'jitter': 0.0}))
        self.assertFalse(np.allclose(a.pixels, still.pixels))
        self.assertFalse(np.allclose(a.pixels, simulate_print_scan(t, params.with_seed(5)).pixels))

    def test_rejects_jitter_outside_unit_range(self):
        for jitter in (-0.1, 1.5):
            with self.assertRaises(ParameterError):
                ChannelParams(jitter=jitter)


class DotPlacementTests(SimpleTestCase):
    def setUp(self):
        bits = np.ones((4, 4), dtype=np.uint8)
        bits[1, 2] = 0
        self.t = BinaryTemplate(bits=bits, density=1 / 16)

    def test_zero_offsets_reproduce_upsample(self):
        t = generate_template(16, 16, 0.4, seed=12)
        pixels = place_dots(t.bits, 4, np.zeros(t.shape + (2,)))
        self.assertTrue(np.array_equal(pixels, upsample(t, 4).pixels))

    def test_displaced_dot_spills_into_neighbours(self):
        offsets = np.zeros((4, 4, 2))
        offsets[1, 2] = (2, -3)
        pixels = place_dots(self.t.bits, 8, offsets)
        expected = np.ones((32, 32))
        expected[10:18, 13:21] = 0.0
        self.assertTrue(np.array_equal(pixels, expected))

    def test_offsets_are_clipped_below_one_symbol(self):
        offsets = np.zeros((4, 4, 2))
        offsets[1, 2] = (20, 0)
        pixels = place_dots(self.t.bits, 4, offsets)
        self.assertEqual(int(np.count_nonzero(pixels == 0)), 16)
        self.assertTrue(np.all(pixels[7:11, 8:12] == 0))

    def test_dots_near_the_border_are_cut(self):
        bits = np.ones((4, 4), dtype=np.uint8)
        bits[0, 0] = 0
        offsets = np.zeros((4, 4, 2))
        offsets[0, 0] = (-2, -2)
        pixels = place_dots(bits, 4, offsets)
        self.assertEqual(int(np.count_nonzero(pixels == 0)), 4)


class CalibrationTests(SimpleTestCase):
    def test_presets_hit_their_otsu_targets(self):
        for tag, profile in PRINTER_PROFILES.items():
            params = printer_preset(tag)
            self.assertGreater(params.jitter, JITTER_RANGE[0])
            self.assertLess(params.jitter, JITTER_RANGE[1])
            self.assertAlmostEqual(mean_otsu_error(params), profile.otsu_target, delta=1.0)

    def test_unreachable_target_returns_range_end_with_warning(self):
        base = ChannelParams(pps=4, psf_sigma=0.2, dot_gain=0.0, noise_std=0.0)
        with self.assertLogs('printchan.calibration', level='WARNING'):
            params = calibrate_jitter(base, target=0.0, codes=2, size=16)
        self.assertEqual(params.jitter, JITTER_RANGE[0])
        with self.assertLogs('printchan.calibration', level='WARNING'):
            params = calibrate_jitter(base, target=99.0, codes=2, size=16)
        self.assertEqual(params.jitter, JITTER_RANGE[1])

    def test_unknown_preset(self):
        with self.assertRaises(ParameterError):
            printer_preset('HP99')

    @tag('slow')
    def test_p55_otsu_error_rises_with_density(self):
        params = printer_preset('P55')
        errors = []
        for density in (0.30, 0.35, 0.40, 0.45, 0.50):
            codes = []
            for seed in range(40):
                t = generate_template(64, 64, density, seed=seed)
                x = simulate_print_scan(t, params.with_seed(params.seed ^ seed))
                codes.append(p_error(otsu_estimate(x), t))
            errors.append(np.mean(codes))
        self.assertAlmostEqual(errors[-1], 20.0, delta=3.0)
        for lower, higher in zip(errors, errors[1:]):
            self.assertGreaterEqual(higher, lower - 0.3)
        self.assertGreater(errors[-1], errors[0])


class ResamplingTests(SimpleTestCase):
    def test_downscale_8_to_3_area_weights(self):
        img = GrayImage(pixels=np.tile(np.arange(8, dtype=float) / 8.0, (8, 1)), pps=8)
        out = downscale(img, 3)
        self.assertEqual(out.shape, (3, 3))
        self.assertEqual(out.pps, 3)
        # columns cover [0, 8/3), [8/3, 16/3), [16/3, 8) of the ramp 0, 1/8, ..., 7/8
        expected = np.array([
            (0 + 1 + (2 / 3) * 2) / (8 / 3),
            ((1 / 3) * 2 + 3 + 4 + (1 / 3) * 5) / (8 / 3),
            ((2 / 3) * 5 + 6 + 7) / (8 / 3),
        ]) / 8.0
        for row in out.pixels:
            self.assertTrue(np.allclose(row, expected, atol=1e-12))

    def test_downscale_keeps_block_means(self):
        t = generate_template(16, 16, 0.5, seed=5)
        x = simulate_print_scan(t, printer_preset('P76'))
        self.assertTrue(np.allclose(block_means(downscale(x, 3)), block_means(x), atol=1e-9))

    def test_downscale_refuses_upsampling(self):
        img = GrayImage(pixels=np.zeros((9, 9)), pps=3)
        with self.assertRaises(ParameterError):
            downscale(img, 8)

    def test_block_means_needs_whole_symbols(self):
        with self.assertRaises(DimensionError):
            block_means(GrayImage(pixels=np.zeros((10, 8)), pps=4))


class RegistrationTests(SimpleTestCase):
    def test_recovers_every_shift_within_range(self):
        t = generate_template(16, 16, 0.5, seed=6)
        img = upsample(t, 8, provenance='original')
        for dy in range(-2, 3):
            for dx in range(-2, 3):
                scan = translate(img, dy, dx, margin=2)
                registration = find_shift(scan, t, max_shift=2)
                self.assertEqual(registration.shift, (-dy, -dx))
                aligned = register(scan, t, max_shift=2)
                self.assertTrue(np.array_equal(aligned.pixels, img.pixels))

    def test_recovers_the_shift_of_a_jittered_scan(self):
        t = generate_template(32, 32, 0.5, seed=13)
        scan = simulate_print_scan(t, printer_preset('P55'))
        shifted = translate(scan, 1, -2, margin=2)
        self.assertEqual(find_shift(shifted, t, max_shift=2).shift, (-1, 2))

    def test_aligned_scan_prefers_zero_shift(self):
        t = generate_template(16, 16, 0.5, seed=7)
        registration = find_shift(upsample(t, 3), t, max_shift=2)
        self.assertEqual(registration.shift, (0, 0))
        self.assertAlmostEqual(registration.score, 1.0)

    def test_translate_respects_margin(self):
        img = upsample(generate_template(16, 16, 0.5, seed=8), 3)
        with self.assertRaises(ParameterError):
            translate(img, 3, 0, margin=2)

    def test_scan_smaller_than_template_is_rejected(self):
        t = generate_template(16, 16, 0.5, seed=9)
        with self.assertRaises(DimensionError):
            find_shift(GrayImage(pixels=np.ones((40, 48)), pps=3), t, max_shift=1)


class GrayFileTests(SimpleTestCase):
    def test_save_then_load_within_quantization(self):
        t = generate_template(16, 16, 0.5, seed=10)
        x = simulate_print_scan(t, printer_preset('P55'), printer_tag='P55')
        with tempfile.TemporaryDirectory() as tmp:
            loaded = load_gray(save_gray(x, Path(tmp) / 'x.png'))
        self.assertEqual(loaded.pps, 8)
        self.assertEqual(loaded.printer_tag, 'P55')
        self.assertLessEqual(np.abs(loaded.pixels - x.pixels).max(), 0.5 / 65535 + 1e-12)

    def test_missing_scan(self):
        with self.assertRaises(FormatError):
            load_gray('/nonexistent/scan.png')

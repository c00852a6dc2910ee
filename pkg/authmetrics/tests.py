import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from attack.otsu import otsu_estimate
from cdpbench.exceptions import DimensionError, ParameterError
from patterns.models import BinaryTemplate
from patterns.services import generate_template, template_rng
from printchan.calibration import printer_preset
from printchan.models import GrayImage
from printchan.services import downscale, simulate_print_scan, translate, upsample
from .models import PreprocessParams
from .services import (
    corr_score, hamming_score, jaccard_score, metric_vector, normalize, read_scores, ssim_score,
    write_scores,
)


def closed_form_ssim(x, y, sigma=1.5, radius=5):
    k = np.arange(-radius, radius + 1)
    g = np.exp(-k ** 2 / (2 * sigma ** 2))
    g /= g.sum()
    w = np.outer(g, g)
    mx, my = (w * x).sum(), (w * y).sum()
    vx = (w * x * x).sum() - mx ** 2
    vy = (w * y * y).sum() - my ** 2
    cxy = (w * x * y).sum() - mx * my
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    return ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2))


class BinaryMetricTests(SimpleTestCase):
    def setUp(self):
        self.t = generate_template(16, 16, 0.5, seed=1)

    def test_hamming_identity_and_complement(self):
        self.assertEqual(hamming_score(self.t, self.t), 0.0)
        self.assertEqual(hamming_score(self.t, self.t.with_bits(1 - self.t.bits)), 1.0)

    def test_jaccard_cases(self):
        self.assertEqual(jaccard_score(self.t, self.t), 1.0)
        self.assertEqual(jaccard_score(self.t, self.t.with_bits(1 - self.t.bits)), 0.0)
        white = BinaryTemplate(bits=np.ones((16, 16), dtype=np.uint8), density=0.0)
        self.assertEqual(jaccard_score(white, white), 1.0)

    def test_shapes_must_agree(self):
        with self.assertRaises(DimensionError):
            hamming_score(self.t, generate_template(16, 32, 0.5, seed=2))


class GrayMetricTests(SimpleTestCase):
    def test_ssim_single_window_matches_closed_form(self):
        rng = template_rng(5)
        for _ in range(20):
            x = rng.random((11, 11))
            y = np.clip(x + 0.3 * rng.standard_normal((11, 11)), 0, 1)
            score = ssim_score(GrayImage(x, pps=1), GrayImage(y, pps=1))
            self.assertAlmostEqual(score, closed_form_ssim(x, y), delta=1e-9)

    def test_ssim_of_identical_images_is_one(self):
        img = upsample(generate_template(16, 16, 0.5, seed=3), 3)
        self.assertAlmostEqual(ssim_score(img, img), 1.0, places=12)

    def test_ssim_needs_a_full_window(self):
        small = GrayImage(np.zeros((10, 30)), pps=1)
        with self.assertRaises(DimensionError):
            ssim_score(small, small)

    def test_corr_of_constant_input_warns(self):
        a = GrayImage(np.ones((12, 12)), pps=1)
        b = GrayImage(template_rng(1).random((12, 12)), pps=1)
        with self.assertLogs('authmetrics.services', level='WARNING'):
            self.assertEqual(corr_score(a, b), 0.0)

    def test_normalize_stretches_to_unit_range(self):
        pixels = np.linspace(0.2, 0.6, 100).reshape(10, 10)
        out = normalize(pixels, PreprocessParams(normalization='minmax'))
        self.assertAlmostEqual(out.min(), 0.0)
        self.assertAlmostEqual(out.max(), 1.0)

    def test_corr_ignores_positive_affine_changes(self):
        rng = template_rng(6)
        for _ in range(10):
            x = GrayImage(rng.random((24, 24)), pps=3)
            y = x.with_pixels(np.clip(x.pixels + 0.2 * rng.standard_normal((24, 24)), 0, 1))
            score = corr_score(x, y)
            self.assertLess(abs(corr_score(x, y.with_pixels(2 * y.pixels - 0.3)) - score), 1e-12)
            self.assertLess(abs(corr_score(x.with_pixels(0.5 * x.pixels + 0.1), y) - score), 1e-12)

    def test_ssim_of_an_image_and_its_negative(self):
        img = upsample(generate_template(16, 16, 0.5, seed=4), 3)
        self.assertLess(ssim_score(img, img.with_pixels(1.0 - img.pixels)), 0.0)


class SymmetryTests(SimpleTestCase):
    def test_every_metric_is_symmetric(self):
        rng = template_rng(8)
        for seed in range(10):
            a = generate_template(16, 16, 0.4, seed=seed)
            b = generate_template(16, 16, 0.5, seed=100 + seed)
            self.assertEqual(hamming_score(a, b), hamming_score(b, a))
            self.assertEqual(jaccard_score(a, b), jaccard_score(b, a))
            x = GrayImage(rng.random((48, 48)), pps=3)
            y = GrayImage(rng.random((48, 48)), pps=3)
            self.assertAlmostEqual(corr_score(x, y), corr_score(y, x), delta=1e-12)
            self.assertAlmostEqual(ssim_score(x, y), ssim_score(y, x), delta=1e-12)


class MetricVectorTests(SimpleTestCase):
    def setUp(self):
        self.t = generate_template(32, 32, 0.5, seed=7)

    def test_clean_scan_scores_perfectly(self):
        v = metric_vector(self.t, upsample(self.t, 3))
        self.assertEqual(v.hamming, 0.0)
        self.assertEqual(v.jaccard, 1.0)
        self.assertGreater(v.ssim, 0.99)
        self.assertGreater(v.corr, 0.99)

    def test_complement_scan_scores_worst(self):
        scan = upsample(self.t.with_bits(1 - self.t.bits), 3)
        v = metric_vector(self.t, scan, PreprocessParams(max_shift=0))
        self.assertEqual(v.hamming, 1.0)
        self.assertEqual(v.jaccard, 0.0)
        self.assertAlmostEqual(v.corr, -1.0)

    def test_shifted_scan_is_registered(self):
        scan = translate(upsample(self.t, 3), 1, -2, margin=2)
        v = metric_vector(self.t, scan, PreprocessParams(max_shift=2))
        self.assertEqual(v.hamming, 0.0)

    def test_original_scores_better_than_fake(self):
        params = printer_preset('P55')
        t = generate_template(64, 64, 0.5, seed=11)
        x = simulate_print_scan(t, params)
        f = simulate_print_scan(otsu_estimate(x), params.with_seed(params.seed + 1), provenance='fake')
        v_x = metric_vector(t, downscale(x, 3))
        v_f = metric_vector(t, downscale(f, 3))
        self.assertLess(v_x.hamming, v_f.hamming)
        self.assertGreater(v_x.corr, v_f.corr)

    def test_preprocess_parameters_validated(self):
        for kwargs in ({'max_shift': -1}, {'normalization': 'zscore'}, {'p_lo': 60, 'p_hi': 40}):
            with self.assertRaises(ParameterError):
                PreprocessParams(**kwargs)


class ScoreFileTests(SimpleTestCase):
    def test_rows_survive_the_csv(self):
        t = generate_template(16, 16, 0.5, seed=9)
        v = metric_vector(t, upsample(t, 3))
        with tempfile.TemporaryDirectory() as tmp:
            path = write_scores([(3, 'P55', '', 'original', v)], Path(tmp) / 's.csv', 'config abc')
            self.assertTrue(path.read_text().startswith('# config abc\n'))
            rows = read_scores(path)
        self.assertEqual(rows, [(3, 'P55', '', 'original', v)])

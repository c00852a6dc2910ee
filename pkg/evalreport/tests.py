import json
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase, tag
from scipy import stats

from attack.lda import lda_train
from attack.services import binarize_estimate, estimate
from authmetrics.models import METRIC_NAMES, MetricVector
from authmetrics.services import metric_vector
from cdpbench.exceptions import ParameterError
from classify.models import ONE_CLASS, Standardization, SvmModel
from classify.services import decision_function, train_one_class
from patterns.services import generate_template, template_rng
from printchan.calibration import printer_preset
from printchan.services import downscale, simulate_print_scan
from .models import FLIPPED_METRICS, trapezoid
from .services import decision_region, emit_report, kde, metric_pairs, roc, scatter_table


def mann_whitney(orig, fake):
    wins = sum((f > o) + 0.5 * (f == o) for o in orig for f in fake)
    return wins / (len(orig) * len(fake))


def score_rows(seed, n=30):
    rng = template_rng(seed)
    rows = []
    for i in range(n):
        rows.append((i, 'P55', '', 'original', MetricVector(*(0.2 + 0.05 * rng.standard_normal(4)))))
        rows.append((i, 'P55', 'P55', 'fake', MetricVector(*(0.4 + 0.05 * rng.standard_normal(4)))))
        rows.append((i, 'P55', 'P76', 'fake-cross', MetricVector(*(0.35 + 0.05 * rng.standard_normal(4)))))
    return rows


class RocTests(SimpleTestCase):
    def test_disjoint_scores_give_perfect_auc(self):
        self.assertEqual(roc([0.1, 0.2, 0.3], [0.7, 0.8]).auc, 1.0)

    def test_identical_lists_give_chance(self):
        scores = [0.1, 0.4, 0.4, 0.9]
        self.assertAlmostEqual(roc(scores, scores).auc, 0.5, places=12)

    def test_three_versus_three_by_hand(self):
        orig, fake = [0.1, 0.5, 0.6], [0.4, 0.5, 0.9]
        # wins: 0.1 loses to all 3, 0.5 ties 0.5 and loses to 0.9, 0.6 loses to 0.9 only
        self.assertAlmostEqual(roc(orig, fake).auc, (3 + 1.5 + 1) / 9, places=12)

    def test_auc_equals_mann_whitney(self):
        rng = template_rng(1)
        for _ in range(50):
            orig = np.round(rng.random(int(rng.integers(1, 200))), 1)
            fake = np.round(rng.random(int(rng.integers(1, 200))) + 0.2, 1)
            self.assertAlmostEqual(roc(orig, fake).auc, mann_whitney(orig, fake), delta=1e-12)

    def test_points_are_monotone(self):
        rng = template_rng(2)
        curve = roc(rng.random(50), rng.random(60))
        self.assertTrue(np.all(np.diff(curve.fpr) >= 0))
        self.assertTrue(np.all(np.diff(curve.tpr) >= 0))
        self.assertEqual((curve.fpr[-1], curve.tpr[-1]), (1.0, 1.0))

    def test_flip_is_an_involution(self):
        rng = template_rng(3)
        orig = rng.integers(0, 9, 40) / 8.0
        fake = rng.integers(0, 9, 40) / 8.0
        raw = roc(orig, fake, flip=False)
        flipped = roc(1.0 - orig, 1.0 - fake, flip=True)
        self.assertTrue(np.array_equal(raw.fpr, flipped.fpr))
        self.assertTrue(np.array_equal(raw.tpr, flipped.tpr))
        self.assertEqual(raw.auc, flipped.auc)
        self.assertEqual(flipped.orientation, '1-s')

    def test_similarity_scores_need_the_flip(self):
        orig, fake = [0.9, 0.8], [0.3, 0.2]
        self.assertEqual(roc(orig, fake, flip=True).auc, 1.0)
        self.assertEqual(roc(orig, fake, flip=False).auc, 0.0)

    def test_empty_class_is_an_error(self):
        with self.assertRaises(ParameterError):
            roc([], [0.5])


    def test_trapezoid_integrates_a_ramp(self):
        self.assertEqual(float(trapezoid([0.0, 1.0, 2.0], [0.0, 1.0, 2.0])), 2.0)
        if hasattr(np, 'trapezoid'):
            self.assertIs(trapezoid, np.trapezoid)


@tag('slow')
class ChannelAucTests(SimpleTestCase):
    def test_hamming_separates_lda_fakes_best(self):
        params = printer_preset('P55')
        attack_pairs = []
        for i in range(100, 112):
            t = generate_template(48, 48, 0.5, seed=i, template_id=i)
            attack_pairs.append((t, simulate_print_scan(t, params.with_seed(params.seed ^ i))))
        lda = lda_train(attack_pairs, window=2)

        originals, fakes = [], []
        for i in range(30):
            t = generate_template(48, 48, 0.5, seed=i, template_id=i)
            x = simulate_print_scan(t, params.with_seed(params.seed ^ i))
            forged = binarize_estimate(estimate(lda, x, template_id=i))
            f = simulate_print_scan(forged, params.with_seed(params.seed ^ (1000 + i)), 'fake')
            originals.append(metric_vector(t, downscale(x, 3)).as_array())
            fakes.append(metric_vector(t, downscale(f, 3)).as_array())
        originals, fakes = np.array(originals), np.array(fakes)

        auc = {name: roc(originals[:, k], fakes[:, k], flip=name in FLIPPED_METRICS).auc
               for k, name in enumerate(METRIC_NAMES)}
        self.assertGreater(auc['hamming'], 0.9)
        for name in METRIC_NAMES:
            self.assertGreaterEqual(auc['hamming'], auc[name] - 0.01, name)


class KdeTests(SimpleTestCase):
    def test_two_symmetric_points(self):
        curve = kde([-1.0, 1.0])
        self.assertEqual(len(curve.grid), 512)
        self.assertTrue(np.allclose(curve.density, curve.density[::-1]))
        self.assertAlmostEqual(curve.mass, 1.0, delta=0.02)

    def test_normal_sample_matches_the_true_density(self):
        x = template_rng(4).standard_normal(10_000)
        curve = kde(x)
        self.assertLess(np.abs(curve.density - stats.norm.pdf(curve.grid)).max(), 0.05)
        self.assertAlmostEqual(curve.mass, 1.0, delta=0.02)

    def test_jittered_repeated_value_is_a_unit_spike(self):
        x = 1.0 + 1e-9 * template_rng(5).standard_normal(50)
        self.assertAlmostEqual(kde(x).mass, 1.0, delta=0.02)

    def test_zero_spread_falls_back_with_warning(self):
        with self.assertLogs('evalreport.services', level='WARNING'):
            curve = kde([0.5] * 10)
        self.assertGreater(curve.bandwidth, 0)
        self.assertAlmostEqual(curve.mass, 1.0, delta=0.02)

    def test_needs_two_scores(self):
        with self.assertRaises(ParameterError):
            kde([0.5])


class DecisionRegionTests(SimpleTestCase):
    def setUp(self):
        self.X = 0.5 + 0.1 * template_rng(6).standard_normal((150, 2))
        self.model = train_one_class(self.X, features=('hamming', 'ssim'))

    def test_region_contains_the_training_centroid(self):
        region = decision_region(self.model, ('hamming', 'ssim'), resolution=60)
        cx, cy = self.X.mean(axis=0)
        col = int(np.argmin(np.abs(region.xs - cx)))
        row = int(np.argmin(np.abs(region.ys - cy)))
        self.assertTrue(region.accepted[row, col])
        self.assertFalse(region.accepted.all())

    def test_grid_values_match_the_decision_function(self):
        region = decision_region(self.model, ('hamming', 'ssim'), resolution=20)
        gx, gy = np.meshgrid(region.xs, region.ys)
        values = decision_function(self.model, np.column_stack([gx.ravel(), gy.ravel()]))
        self.assertTrue(np.allclose(values.reshape(20, 20), region.values, atol=1e-9))

    def test_needs_a_two_feature_model_with_support_vectors(self):
        four = train_one_class(template_rng(7).standard_normal((40, 4)))
        with self.assertRaises(ParameterError):
            decision_region(four, ('hamming', 'ssim'))
        empty = SvmModel(kind=ONE_CLASS, gamma=0.3, nu=0.5, rho=0.0, support_vectors=np.zeros((0, 2)),
                         dual_coef=np.zeros(0), standardization=Standardization(np.zeros(2), np.ones(2)))
        with self.assertRaises(ParameterError):
            decision_region(empty, ('hamming', 'ssim'))


class ReportTests(SimpleTestCase):
    def test_scatter_table_lists_every_pair(self):
        rows = [(i, cls, v) for i, _, _, cls, v in score_rows(8, n=5)]
        with tempfile.TemporaryDirectory() as tmp:
            lines = scatter_table(rows, Path(tmp) / 's.csv').read_text().splitlines()
        self.assertEqual(len(metric_pairs()), 6)
        self.assertEqual(lines[0], 'metric_x,metric_y,code_id,class,x,y')
        self.assertEqual(len(lines), 1 + 6 * len(rows))

    def test_bundle_layout_and_reproducibility(self):
        scores = {'P55': score_rows(9)}
        originals = np.array([v.as_tuple()[:2] for _, _, _, cls, v in scores['P55'] if cls == 'original'])
        models = {'P55': train_one_class(originals, features=('hamming', 'ssim'))}
        outputs = []
        with tempfile.TemporaryDirectory() as tmp:
            for name in ('a', 'b'):
                root = Path(tmp) / name
                manifest = emit_report(root, scores, models=models, resolution=30,
                                       config_echo={'name': 'test'}, config_hash='abc', seeds={'templates': 0})
                outputs.append((root / 'tables' / 'roc_auc.csv').read_bytes())
            payload = json.loads(manifest.read_text())
            self.assertTrue((root / 'figures' / 'roc_P55.svg').exists())
            self.assertTrue((root / 'figures' / 'kde_P55_hamming.svg').exists())
            self.assertTrue((root / 'figures' / 'decision_P55.svg').exists())
            self.assertTrue((root / 'tables' / 'decision_P55.csv').exists())

        self.assertEqual(outputs[0], outputs[1])
        self.assertEqual(payload['config_hash'], 'abc')
        self.assertIn('tables/roc_auc.csv', payload['tables'])
        self.assertIn('numpy', payload['versions'])
        roc_lines = outputs[0].decode().splitlines()
        self.assertTrue(roc_lines[0].startswith('# config abc'))
        self.assertEqual(roc_lines[1], 'printer,metric,orientation,auc')
        self.assertEqual(len(roc_lines), 2 + 4)

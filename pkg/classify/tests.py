import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase, tag

from attack.lda import lda_train
from attack.services import binarize_estimate, estimate
from authmetrics.models import MetricVector
from authmetrics.services import metric_vector
from cdpbench.exceptions import ParameterError, ProtocolError, SolverError
from patterns.services import generate_template, template_rng
from printchan.calibration import printer_preset
from printchan.services import downscale, simulate_print_scan
from .models import (
    LABEL_FAKE, LABEL_ORIGINAL, ONE_CLASS, TWO_CLASS, ErrorRates, ProtocolConfig, ScoreSet,
    Standardization, SvmModel,
)
from .services import (
    decision_function, evaluate_protocol, kkt_residual, load_svm, predict, predict_original,
    rbf_kernel, save_svm, standardize_fit, train_one_class, train_two_class, write_error_table,
)
from .solver import solve_dual


def blob(seed, n=200, d=2, center=0.0, scale=1.0):
    return center + scale * template_rng(seed).standard_normal((n, d))


def scoreset(vectors, ids=None):
    return ScoreSet(vectors, np.arange(len(vectors)) if ids is None else ids)


def channel_vectors(codes, printer, estimator=None):
    """
    Metric vectors at 3 pixels per symbol of the prints of `codes`, or of the
    fakes re-printed from `estimator` estimates of those prints.
    """
    params = printer_preset(printer)
    rows = []
    for t in codes:
        x = simulate_print_scan(t, params.with_seed(params.seed ^ t.id), printer_tag=printer)
        if estimator is not None:
            forged = binarize_estimate(estimate(estimator, x, template_id=t.id))
            x = simulate_print_scan(forged, params.with_seed(params.seed ^ (1000 + t.id)), 'fake', printer)
        rows.append(metric_vector(t, downscale(x, 3)).as_tuple())
    return ScoreSet(np.array(rows), np.array([t.id for t in codes]))


class StandardizationTests(SimpleTestCase):
    def test_symmetric_points_center_on_midpoint(self):
        std = standardize_fit([[1.0, 2.0], [3.0, 6.0]])
        self.assertTrue(np.allclose(std.mean, [2.0, 4.0]))

    def test_transformed_set_has_zero_mean_unit_variance(self):
        X = blob(1, d=4, center=5.0, scale=3.0)
        Z = standardize_fit(X).transform(X)
        self.assertTrue(np.allclose(Z.mean(axis=0), 0.0, atol=1e-12))
        self.assertTrue(np.allclose(Z.var(axis=0), 1.0, atol=1e-12))

    def test_constant_feature_keeps_scale_one(self):
        X = np.column_stack([np.arange(5.0), np.full(5, 3.0)])
        with self.assertLogs('classify.services', level='WARNING'):
            std = standardize_fit(X)
        self.assertEqual(std.scale[1], 1.0)

    def test_needs_two_vectors(self):
        with self.assertRaises(ParameterError):
            standardize_fit([[1.0, 2.0]])


class OneClassTests(SimpleTestCase):
    def test_accepts_same_distribution_holdout(self):
        model = train_one_class(blob(2), nu=0.01, gamma=0.3)
        accepted = predict_original(model, blob(3, n=500))
        self.assertGreaterEqual(accepted.mean(), 0.95)

    def test_rejects_far_cluster(self):
        model = train_one_class(blob(4))
        far = blob(5, n=50, center=10.0, scale=0.1)
        self.assertFalse(predict_original(model, far).any())

    def test_nu_bounds_outliers_and_support_vectors(self):
        X = blob(6)
        n = len(X)
        for nu in (0.01, 0.1, 0.5):
            model = train_one_class(X, nu=nu, gamma=0.3)
            outliers = np.mean(decision_function(model, X) < -1e-5)
            self.assertLessEqual(outliers, nu + 2.0 / n)
            self.assertGreaterEqual(len(model.support_vectors) / n, nu - 2.0 / n)
            self.assertTrue(np.all(model.dual_coef <= 1.0 + 1e-12))
            self.assertAlmostEqual(model.dual_coef.sum(), nu * n, places=8)
            self.assertLess(kkt_residual(model, X), 1e-6)

    def test_centroid_is_original_and_distant_point_fake(self):
        X = blob(7, center=1.0)
        model = train_one_class(X)
        label, score = predict(model, X.mean(axis=0))
        self.assertEqual(label, LABEL_ORIGINAL)
        self.assertGreater(score, 0)
        self.assertEqual(predict(model, X.mean(axis=0) + 100.0)[0], LABEL_FAKE)

    def test_metric_vectors_accepted_as_input(self):
        X = blob(8, d=4)
        model = train_one_class([MetricVector(*row) for row in X])
        self.assertEqual(model.n_features, 4)
        self.assertIn(predict(model, MetricVector(*X[0]))[0], (LABEL_ORIGINAL, LABEL_FAKE))

    def test_zero_decision_is_fake(self):
        model = SvmModel(
            kind=ONE_CLASS, gamma=0.3, nu=0.5, rho=0.0,
            support_vectors=np.zeros((0, 2)), dual_coef=np.zeros(0),
            standardization=Standardization(np.zeros(2), np.ones(2)),
        )
        self.assertEqual(predict(model, [0.0, 0.0]), (LABEL_FAKE, 0.0))

    def test_positive_rescaling_keeps_labels(self):
        X = blob(9)
        test = np.vstack([blob(10, n=50), blob(11, n=20, center=4.0)])
        a = predict_original(train_one_class(X), test)
        b = predict_original(train_one_class(X * 7.0), test * 7.0)
        self.assertTrue(np.array_equal(a, b))

    def test_rejects_small_training_sets_and_bad_nu(self):
        with self.assertRaises(ParameterError):
            train_one_class(blob(12, n=9))
        with self.assertRaises(ParameterError):
            train_one_class(blob(12), nu=0.0)
        with self.assertRaises(ParameterError):
            SvmModel(kind=ONE_CLASS, gamma=0.3, nu=1.5, rho=0.0, support_vectors=np.zeros((0, 2)),
                     dual_coef=np.zeros(0), standardization=Standardization(np.zeros(2), np.ones(2)))


class TwoClassTests(SimpleTestCase):
    def test_linearly_separable_set_has_no_training_error(self):
        pos = blob(20, n=50, center=3.0, scale=0.5)
        neg = blob(21, n=50, center=-3.0, scale=0.5)
        model = train_two_class(pos, neg)
        self.assertTrue(predict_original(model, pos).all())
        self.assertFalse(predict_original(model, neg).any())

    def test_xor_pattern_is_learned_by_the_rbf_kernel(self):
        rng = template_rng(22)
        corners = np.array([[1, 1], [-1, -1], [1, -1], [-1, 1]], dtype=float) * 2.0
        points = [c + 0.2 * rng.standard_normal((25, 2)) for c in corners]
        pos, neg = np.vstack(points[:2]), np.vstack(points[2:])
        model = train_two_class(pos, neg, C=10.0)
        self.assertTrue(predict_original(model, pos).all())
        self.assertFalse(predict_original(model, neg).any())
        y = np.concatenate([np.ones(len(pos)), -np.ones(len(neg))])
        self.assertLess(kkt_residual(model, np.vstack([pos, neg]), y), 1e-6)

    def test_kkt_and_box_hold_on_overlapping_classes(self):
        pos = blob(23, n=80, d=4)
        neg = blob(24, n=80, d=4, center=0.7)
        model = train_two_class(pos, neg, C=1.0)
        y = np.concatenate([np.ones(80), -np.ones(80)])
        self.assertLess(kkt_residual(model, np.vstack([pos, neg]), y), 1e-6)
        self.assertTrue(np.all(np.abs(model.dual_coef) <= 1.0 + 1e-12))
        self.assertAlmostEqual(model.dual_coef.sum(), 0.0, places=8)

    def test_margin_support_vector_sits_on_the_margin(self):
        pos = blob(25, n=40, center=1.5)
        neg = blob(26, n=40, center=-1.5)
        model = train_two_class(pos, neg, C=100.0)
        X = np.vstack([pos, neg])
        free = np.abs(model.dual_coef) < 100.0 - 1e-9
        for index in model.support_indices[free]:
            value = decision_function(model, X[index:index + 1])[0]
            self.assertAlmostEqual(abs(value), 1.0, delta=1e-4)

    def test_both_classes_required(self):
        with self.assertRaises(ParameterError):
            train_two_class(blob(27, n=10), np.zeros((0, 2)))


class SolverTests(SimpleTestCase):
    def test_seed_orders_the_rows_but_not_the_optimum(self):
        X = blob(31, n=80)
        first = train_one_class(X, nu=0.1, seed=0)
        again = train_one_class(X, nu=0.1, seed=0)
        other = train_one_class(X, nu=0.1, seed=5)
        self.assertEqual(other.seed, 5)
        self.assertTrue(np.array_equal(decision_function(first, X), decision_function(again, X)))
        self.assertTrue(np.allclose(decision_function(first, X), decision_function(other, X), atol=1e-4))
        self.assertLess(kkt_residual(other, X), 1e-5)

        pos, neg = blob(32, n=40, center=1.0), blob(33, n=40, center=-1.0)
        y = np.concatenate([np.ones(40), -np.ones(40)])
        a = train_two_class(pos, neg, seed=1)
        b = train_two_class(pos, neg, seed=2)
        self.assertTrue(np.allclose(decision_function(a, X), decision_function(b, X), atol=1e-4))
        self.assertLess(kkt_residual(b, np.vstack([pos, neg]), y), 1e-5)

    def test_iteration_cap_raises(self):
        X = blob(30, n=40)
        K = rbf_kernel(X, X, 0.3)
        y = np.where(X[:, 0] > 0, 1.0, -1.0)
        with self.assertRaises(SolverError):
            solve_dual(y[:, None] * y[None, :] * K, -np.ones(40), y, 1.0, np.zeros(40), max_iter=1)


class ProtocolTests(SimpleTestCase):
    def setUp(self):
        self.originals = scoreset(blob(40, n=120, d=4))
        self.far_fakes = scoreset(blob(41, n=120, d=4, center=8.0))
        self.cfg = ProtocolConfig(kind=ONE_CLASS, train_size=60, runs=5,
                                  metric_subset=('hamming', 'ssim', 'jaccard', 'corr'))

    def test_disjoint_clusters(self):
        rates = evaluate_protocol(self.originals, self.far_fakes, self.cfg)
        self.assertEqual(rates.p_fa, 0.0)
        self.assertLess(rates.p_miss, 20.0)
        self.assertEqual(rates.runs, 5)
        self.assertGreaterEqual(rates.p_miss_std, 0.0)

    def test_fakes_from_the_same_distribution_pass(self):
        same = scoreset(blob(42, n=120, d=4))
        rates = evaluate_protocol(self.originals, same, self.cfg)
        self.assertGreater(rates.p_fa, 70.0)

    def test_input_order_does_not_change_the_result(self):
        order = template_rng(43).permutation(120)
        shuffled = ScoreSet(self.originals.vectors[order], self.originals.ids[order])
        self.assertEqual(evaluate_protocol(self.originals, self.far_fakes, self.cfg),
                         evaluate_protocol(shuffled, self.far_fakes, self.cfg))

    def test_metric_subset_selects_columns(self):
        vectors = self.far_fakes.vectors.copy()
        vectors[:, 2:] = self.originals.vectors[:, 2:]
        fakes = scoreset(vectors)
        pair = ProtocolConfig(kind=ONE_CLASS, train_size=60, runs=3, metric_subset=('jaccard', 'corr'))
        separable = ProtocolConfig(kind=ONE_CLASS, train_size=60, runs=3, metric_subset=('hamming', 'ssim'))
        self.assertGreater(evaluate_protocol(self.originals, fakes, pair).p_fa, 50.0)
        self.assertEqual(evaluate_protocol(self.originals, fakes, separable).p_fa, 0.0)

    def test_wrong_printer_originals_are_missed(self):
        other = scoreset(blob(44, n=120, d=4, center=2.5))
        same = evaluate_protocol(self.originals, self.far_fakes, self.cfg)
        cross = evaluate_protocol(self.originals, self.far_fakes, self.cfg,
                                  test_originals=other, test_fakes=self.far_fakes)
        self.assertGreater(cross.p_miss, same.p_miss + 10.0)

    def test_two_class_beats_one_class_on_overlapping_fakes(self):
        near = scoreset(blob(45, n=120, d=4, center=1.0))
        one = evaluate_protocol(self.originals, near, self.cfg)
        two = evaluate_protocol(self.originals, near,
                                ProtocolConfig(kind=TWO_CLASS, train_size=60, runs=5))
        self.assertLess(two.p_miss + two.p_fa, one.p_miss + one.p_fa)

    def test_every_run_is_reported(self):
        rates = evaluate_protocol(self.originals, self.far_fakes, self.cfg)
        self.assertEqual(len(rates.p_miss_runs), 5)
        self.assertEqual(len(rates.p_fa_runs), 5)
        self.assertAlmostEqual(np.mean(rates.p_miss_runs), rates.p_miss, places=12)
        self.assertAlmostEqual(np.std(rates.p_fa_runs), rates.p_fa_std, places=12)

    def test_insufficient_codes(self):
        with self.assertRaises(ProtocolError):
            evaluate_protocol(scoreset(blob(46, n=60, d=4)), self.far_fakes, self.cfg)


@tag('slow')
class ChannelProtocolTests(SimpleTestCase):
    """P55 originals against fakes re-printed from LDA estimates."""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        params = printer_preset('P55')
        attack_pairs = []
        for i in range(100, 112):
            t = generate_template(48, 48, 0.5, seed=i, template_id=i)
            attack_pairs.append((t, simulate_print_scan(t, params.with_seed(params.seed ^ i))))
        lda = lda_train(attack_pairs, window=2)

        codes = [generate_template(48, 48, 0.5, seed=i, template_id=i) for i in range(40)]
        cls.originals = channel_vectors(codes, 'P55')
        cls.fakes = channel_vectors(codes, 'P55', estimator=lda)
        cls.other_printer = channel_vectors(codes, 'P76')

    def test_two_class_beats_one_class_in_most_runs(self):
        one = evaluate_protocol(self.originals, self.fakes,
                                ProtocolConfig(kind=ONE_CLASS, train_size=20, runs=20))
        two = evaluate_protocol(self.originals, self.fakes,
                                ProtocolConfig(kind=TWO_CLASS, train_size=20, runs=20))
        one_total = np.add(one.p_miss_runs, one.p_fa_runs)
        two_total = np.add(two.p_miss_runs, two.p_fa_runs)
        wins = np.count_nonzero((two_total < one_total) | ((two_total == 0) & (one_total == 0)))
        self.assertGreaterEqual(wins, 18)

    def test_originals_from_another_printer_are_missed(self):
        cfg = ProtocolConfig(kind=ONE_CLASS, train_size=20, runs=20)
        same = evaluate_protocol(self.originals, self.fakes, cfg)
        cross = evaluate_protocol(self.originals, self.fakes, cfg, test_originals=self.other_printer)
        self.assertGreaterEqual(cross.p_miss, same.p_miss + 10.0)


class ModelFileTests(SimpleTestCase):
    def test_saved_model_gives_identical_decisions(self):
        X = blob(50)
        model = train_one_class(X, nu=0.1)
        with tempfile.TemporaryDirectory() as tmp:
            loaded = load_svm(save_svm(model, Path(tmp) / 'svm.npz'))
        self.assertEqual(loaded.kind, ONE_CLASS)
        self.assertTrue(np.array_equal(decision_function(loaded, X), decision_function(model, X)))
        self.assertTrue(np.array_equal(loaded.bounds[0], model.bounds[0]))

    def test_error_table_layout(self):
        rates = ErrorRates(p_miss=5.083, p_miss_std=1.78, p_fa=42.7, p_fa_std=12.71, runs=20)
        with tempfile.TemporaryDirectory() as tmp:
            path = write_error_table([(('hamming', 'ssim'), 'xP55', 'P55', 'P76', rates)],
                                     Path(tmp) / 't.csv', 'config abc')
            lines = path.read_text().splitlines()
        self.assertEqual(lines[0], '# config abc')
        self.assertEqual(lines[1], 'metric_subset,trained_on,P_D,P_A,p_miss_mean,p_miss_std,p_fa_mean,p_fa_std')
        self.assertEqual(lines[2], 'hamming+ssim,xP55,P55,P76,5.08,1.78,42.70,12.71')

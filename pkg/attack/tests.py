import tempfile
from fractions import Fraction
from itertools import accumulate
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
from django.test import SimpleTestCase, tag

from cdpbench.exceptions import DimensionError, ParameterError, TrainingError
from patterns.models import BinaryTemplate
from patterns.services import generate_template, template_rng
from printchan.calibration import printer_preset
from printchan.models import ChannelParams, GrayImage
from printchan.services import block_means, simulate_print_scan, upsample
from .lda import lda_scores, lda_train, neighbourhood_features
from .models import (
    KIND_LDA, MODE_DETERMINISTIC, MODE_STOCHASTIC, SoftEstimate, TrainConfig,
)
from .networks import TemplateCritic, TemplateEstimator
from .otsu import LEVELS, otsu_estimate, otsu_threshold, threshold_symbols
from .services import (
    binarize_estimate, estimate, load_model, otsu_model, p_error, save_model, write_loss_history,
)
from .training import estimation_loss, train_estimator


def brute_force_otsu(hist):
    counts = [0] + list(accumulate(hist))
    sums = [0] + list(accumulate(i * c for i, c in enumerate(hist)))
    total, total_sum = counts[-1], sums[-1]
    best_t, best_var = None, None
    for t in range(1, LEVELS):
        n0 = counts[t]
        n1 = total - n0
        if n0 == 0 or n1 == 0:
            continue
        mu0 = Fraction(sums[t], n0)
        mu1 = Fraction(total_sum - sums[t], n1)
        var = Fraction(n0 * n1, total * total) * (mu0 - mu1) ** 2
        if best_var is None or var > best_var:
            best_t, best_var = t, var
    return best_t


def printed_pairs(count, size=32, density=0.5, printer='P55', offset=0):
    params = printer_preset(printer)
    pairs = []
    for i in range(offset, offset + count):
        t = generate_template(size, size, density, seed=i, template_id=i)
        pairs.append((t, simulate_print_scan(t, params.with_seed(params.seed ^ i))))
    return pairs


# the learned estimator budget of the desk experiment
DESK_TRAINING = dict(epochs=20, steps_per_epoch=50, batch_size=8, learning_rate=2e-3, crop=32,
                     critic_patch=16, base_channels=16, adversarial_warmup=5, seed=0)


class OtsuTests(SimpleTestCase):
    def test_matches_brute_force_on_random_histograms(self):
        rng = template_rng(42)
        for _ in range(1000):
            hist = rng.integers(0, 20, LEVELS)
            hist[rng.random(LEVELS) < 0.6] = 0
            if np.count_nonzero(hist) < 2:
                hist[0], hist[-1] = 1, 1
            self.assertEqual(otsu_threshold(hist), brute_force_otsu([int(c) for c in hist]))

    def test_two_spikes_split_at_lowest_threshold(self):
        hist = np.zeros(LEVELS, dtype=int)
        hist[50] = 10
        hist[200] = 10
        self.assertEqual(otsu_threshold(hist), 51)

    def test_single_bin_returns_its_value_with_warning(self):
        hist = np.zeros(LEVELS, dtype=int)
        hist[128] = 100
        with self.assertLogs('attack.otsu', level='WARNING'):
            self.assertEqual(otsu_threshold(hist), 128)

    def test_rejects_bad_histograms(self):
        with self.assertRaises(ParameterError):
            otsu_threshold(np.zeros(LEVELS))
        with self.assertRaises(ParameterError):
            otsu_threshold(np.ones(10))

    def test_threshold_symbols_maps_dark_to_black(self):
        means = np.array([[0.1, 0.9], [0.2, 0.8]])
        self.assertTrue(np.array_equal(threshold_symbols(means), [[0, 1], [0, 1]]))

    def test_clean_scan_is_recovered_exactly(self):
        t = generate_template(32, 32, 0.4, seed=3)
        self.assertEqual(p_error(otsu_estimate(upsample(t, 8)), t), 0.0)

    def test_p55_density_50_error_band(self):
        errors = [p_error(otsu_estimate(x), t) for t, x in printed_pairs(40, size=64)]
        self.assertAlmostEqual(np.mean(errors), 20.0, delta=3.0)

    def test_inverted_contrast_flips_almost_every_symbol(self):
        params = ChannelParams(pps=8, psf_sigma=0.25, dot_gain=0.0, gain=-1.0, offset=1.0, noise_std=0.01)
        for seed in range(3):
            t = generate_template(32, 32, 0.4, seed=seed)
            self.assertGreater(p_error(otsu_estimate(simulate_print_scan(t, params)), t), 98.0)


class LdaTests(SimpleTestCase):
    def test_neighbourhood_features_replicate_edges(self):
        means = np.arange(9, dtype=float).reshape(3, 3)
        features = neighbourhood_features(means, 1)
        self.assertEqual(features.shape, (9, 9))
        # top-left symbol sees its own value replicated up and left
        self.assertTrue(np.array_equal(features[0], [0, 0, 1, 0, 0, 1, 3, 3, 4]))

    def test_beats_otsu_on_printed_codes(self):
        model = lda_train(printed_pairs(8), window=2)
        test = printed_pairs(6, offset=100)
        lda = np.mean([p_error(binarize_estimate(estimate(model, x)), t) for t, x in test])
        otsu = np.mean([p_error(otsu_estimate(x), t) for t, x in test])
        self.assertLess(lda, otsu)

    def test_unbalanced_classes_threshold_at_the_midpoint(self):
        pairs = printed_pairs(6, density=0.2)
        model = lda_train(pairs, window=1)
        features = np.concatenate([neighbourhood_features(block_means(x), 1) for _, x in pairs])
        labels = np.concatenate([t.bits.ravel() for t, _ in pairs])
        midpoint = (features[labels == 1].mean(axis=0) + features[labels == 0].mean(axis=0)) / 2.0
        self.assertAlmostEqual(model.bias, -model.weights @ midpoint, places=9)

    def test_centre_only_window_is_a_global_threshold(self):
        rng = template_rng(7)
        pairs = []
        for seed in range(4):
            t = generate_template(64, 64, 0.5, seed=seed)
            means = np.where(t.bits == 1, 0.65, 0.35) + 0.08 * rng.standard_normal(t.shape)
            pairs.append((t, GrayImage(np.clip(means, 0.0, 1.0), pps=1)))
        model = lda_train(pairs, window=0)
        self.assertGreater(model.weights[0], 0.0)

        values = np.concatenate([x.pixels.ravel() for _, x in pairs])
        labels = np.concatenate([t.bits.ravel() for t, _ in pairs])
        predicted = np.concatenate([lda_scores(model, x) >= 0 for _, x in pairs])
        self.assertGreaterEqual(values[predicted].min(), values[~predicted].max())

        # exhaustive search over the 256 histogram levels
        levels = np.arange(LEVELS) / (LEVELS - 1)
        oracle_errors = [np.mean((values >= level) != labels) for level in levels]
        best = levels[int(np.argmin(oracle_errors))]
        threshold = -model.bias / model.weights[0]
        self.assertLessEqual(np.mean(predicted != labels), min(oracle_errors) + 0.005)
        self.assertLess(abs(threshold - best), 0.03)

    def test_constant_scans_warn_and_add_ridge(self):
        pairs = [(generate_template(16, 16, 0.5, seed=i), GrayImage(np.full((64, 64), 0.5), pps=4))
                 for i in range(2)]
        with self.assertLogs('attack.lda', level='WARNING'):
            model = lda_train(pairs, window=1)
        self.assertTrue(np.all(np.isfinite(model.weights)))

    def test_needs_both_classes_and_registered_scans(self):
        white = BinaryTemplate(bits=np.ones((16, 16), dtype=np.uint8), density=0.0)
        with self.assertRaises(ParameterError):
            lda_train([(white, upsample(white, 4))])
        t = generate_template(16, 16, 0.5, seed=1)
        with self.assertRaises(DimensionError):
            lda_train([(t, GrayImage(np.ones((60, 64)), pps=4))])

    def test_checkpoint_keeps_weights(self):
        model = lda_train(printed_pairs(2, size=16), window=1)
        with tempfile.TemporaryDirectory() as tmp:
            loaded = load_model(save_model(model, Path(tmp) / 'lda.npz'))
        self.assertEqual(loaded.kind, KIND_LDA)
        self.assertTrue(np.array_equal(loaded.weights, model.weights))
        self.assertEqual(loaded.bias, model.bias)


class EstimateTests(SimpleTestCase):
    def test_binarize_tie_goes_to_white(self):
        e = SoftEstimate(values=np.array([[0.49, 0.5], [0.51, 0.0]]))
        self.assertTrue(np.array_equal(binarize_estimate(e).bits, [[0, 1], [1, 0]]))

    def test_soft_estimate_range_checked(self):
        with self.assertRaises(ParameterError):
            SoftEstimate(values=np.array([1.2]))

    def test_p_error_counts_percentage(self):
        t = generate_template(16, 16, 0.5, seed=4)
        flipped = t.with_bits(1 - t.bits)
        self.assertEqual(p_error(flipped, t), 100.0)
        self.assertEqual(p_error(t, t), 0.0)

    def test_p_error_is_a_symmetric_scaled_metric(self):
        for seed in range(20):
            a, b, c = (generate_template(16, 16, 0.2 + 0.1 * k, seed=3 * seed + k) for k in range(3))
            self.assertEqual(p_error(a, b), p_error(b, a))
            self.assertLessEqual(p_error(a, c), p_error(a, b) + p_error(b, c) + 1e-9)

    def test_scan_resolution_must_match_model(self):
        t = generate_template(16, 16, 0.5, seed=5)
        with self.assertRaises(DimensionError):
            estimate(otsu_model(8), upsample(t, 3))


class EstimationLossTests(SimpleTestCase):
    def setUp(self):
        torch.manual_seed(0)
        self.mapper = nn.Sequential(
            nn.Conv2d(1, 4, 3, padding=1), nn.Tanh(),
            nn.Conv2d(4, 4, 3, padding=1), nn.Tanh(),
            nn.Conv2d(4, 1, 3, padding=1), nn.Sigmoid(),
        ).double()
        self.critic = TemplateCritic(patch=8, channels=4).double()
        gen = torch.Generator().manual_seed(1)
        self.scans = torch.rand((2, 1, 8, 8), generator=gen, dtype=torch.float64)
        self.templates = (torch.rand((2, 1, 8, 8), generator=gen) > 0.5).double()

    def _loss(self):
        total, _, _, _ = estimation_loss(self.mapper, self.critic, self.scans, self.templates,
                                         lam=1.0, adversarial_weight=0.1)
        return total

    def test_total_is_recon_plus_marginal(self):
        total, recon, marginal, estimate = estimation_loss(
            self.mapper, self.critic, self.scans, self.templates, lam=2.0, adversarial_weight=0.1)
        self.assertAlmostEqual(total.item(), recon.item() + marginal.item(), places=12)
        expected = 2.0 * torch.mean((self.templates - estimate) ** 2)
        self.assertAlmostEqual(recon.item(), expected.item(), places=12)

    def test_gradient_matches_central_differences(self):
        weight = self.mapper[0].weight
        self._loss().backward()
        analytic = weight.grad.clone()
        h = 1e-6
        for index in [(0, 0, 0, 0), (1, 0, 1, 2), (3, 0, 2, 1), (2, 0, 1, 1)]:
            with torch.no_grad():
                original = weight[index].item()
                weight[index] = original + h
                plus = self._loss().item()
                weight[index] = original - h
                minus = self._loss().item()
                weight[index] = original
            numeric = (plus - minus) / (2 * h)
            scale = max(abs(numeric), abs(analytic[index].item()), 1e-6)
            self.assertLess(abs(numeric - analytic[index].item()) / scale, 1e-3)

    def test_no_critic_means_no_marginal_term(self):
        total, recon, marginal, _ = estimation_loss(self.mapper, None, self.scans, self.templates,
                                                    lam=1.0, adversarial_weight=0.5)
        self.assertEqual(marginal.item(), 0.0)
        self.assertEqual(total.item(), recon.item())


class NetworkTests(SimpleTestCase):
    def test_one_output_per_symbol_for_any_grid(self):
        net = TemplateEstimator(pps=8, base_channels=4)
        out = net(torch.rand(1, 1, 18 * 8, 22 * 8))
        self.assertEqual(tuple(out.shape), (1, 1, 18, 22))
        self.assertGreaterEqual(out.min().item(), 0.0)
        self.assertLessEqual(out.max().item(), 1.0)

    def test_critic_patch_multiple_of_eight(self):
        with self.assertRaises(ValueError):
            TemplateCritic(patch=12)


class TrainingTests(SimpleTestCase):
    def _config(self, **changes):
        base = dict(epochs=2, steps_per_epoch=4, batch_size=4, crop=16, critic_patch=8, base_channels=4,
                    seed=3)
        base.update(changes)
        return TrainConfig(**base)

    def test_needs_enough_pairs(self):
        with self.assertRaises(ParameterError):
            train_estimator(printed_pairs(4, size=16), self._config())

    def test_non_finite_loss_raises_with_epoch(self):
        pairs = [(t, x.with_pixels(np.full(x.shape, np.nan))) for t, x in printed_pairs(8, size=16)]
        with self.assertRaises(TrainingError) as ctx:
            train_estimator(pairs, self._config())
        self.assertEqual(ctx.exception.epoch, 1)

    @tag('slow')
    def test_training_is_seeded_and_checkpoints_replay(self):
        pairs = printed_pairs(8, size=16)
        model, history = train_estimator(pairs, self._config())
        again, _ = train_estimator(pairs, self._config())
        self.assertEqual(len(history), 2)
        self.assertTrue(all(np.isfinite(h.total) for h in history))
        self.assertEqual(model.label, f'learned-{MODE_DETERMINISTIC}')

        _, x = printed_pairs(1, size=16, offset=50)[0]
        first = estimate(model, x).values
        self.assertTrue(np.array_equal(first, estimate(again, x).values))
        with tempfile.TemporaryDirectory() as tmp:
            loaded = load_model(save_model(model, Path(tmp) / 'net.npz'))
            write_loss_history(history, Path(tmp) / 'loss.csv')
            header = (Path(tmp) / 'loss.csv').read_text().splitlines()[0]
        self.assertTrue(np.allclose(estimate(loaded, x).values, first, atol=1e-6))
        self.assertEqual(header, 'epoch,total,recon,marginal')

    @tag('slow')
    def test_stochastic_mode_adds_input_noise(self):
        model, _ = train_estimator(printed_pairs(8, size=16), self._config(epochs=1), mode=MODE_STOCHASTIC)
        self.assertEqual(model.label, f'learned-{MODE_STOCHASTIC}')
        self.assertGreater(model.input_noise_std, 0)
        _, x = printed_pairs(1, size=16, offset=60)[0]
        self.assertTrue(np.array_equal(estimate(model, x, seed=1).values, estimate(model, x, seed=1).values))

    def test_adversarial_weight_warms_up_linearly(self):
        cfg = TrainConfig(adversarial_weight=0.02, adversarial_warmup=4)
        self.assertEqual([cfg.adversarial_weight_at(e) for e in (1, 3, 5, 9)], [0.0, 0.01, 0.02, 0.02])
        self.assertEqual(TrainConfig(adversarial_weight=0.02, adversarial_warmup=0).adversarial_weight_at(1), 0.02)

    def test_first_epoch_trains_on_reconstruction_only(self):
        _, history = train_estimator(printed_pairs(8, size=16), self._config(epochs=1, adversarial_warmup=3))
        self.assertEqual(history[0].marginal, 0.0)
        self.assertEqual(history[0].total, history[0].recon)

    def test_rejects_empty_schedule(self):
        with self.assertRaises(ParameterError):
            self._config(steps_per_epoch=0)
        with self.assertRaises(ParameterError):
            self._config(adversarial_warmup=-1)

    @tag('slow')
    def test_degenerate_channel_is_learned_almost_exactly(self):
        codes = [generate_template(64, 64, 0.5, seed=i, template_id=i) for i in range(12)]
        model, _ = train_estimator([(t, upsample(t, 8)) for t in codes[:8]], TrainConfig(**DESK_TRAINING))
        errors = [p_error(binarize_estimate(estimate(model, upsample(t, 8))), t) for t in codes[8:]]
        self.assertLess(np.mean(errors), 0.5)


def mean_estimate_error(model, pairs):
    return float(np.mean([p_error(binarize_estimate(estimate(model, x, seed=t.id)), t) for t, x in pairs]))


@tag('slow')
class AttackOrderingTests(SimpleTestCase):
    """Otsu, LDA and both learned modes on held-out P55 codes"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cfg = TrainConfig(**DESK_TRAINING)
        cls.errors = {}
        for density in (0.3, 0.5):
            train = printed_pairs(16, size=64, density=density)
            test = printed_pairs(12, size=64, density=density, offset=500)
            cls.errors[density] = {
                'otsu': float(np.mean([p_error(otsu_estimate(x), t) for t, x in test])),
                'lda': mean_estimate_error(lda_train(train, window=2), test),
                MODE_DETERMINISTIC: mean_estimate_error(train_estimator(train, cfg)[0], test),
                MODE_STOCHASTIC: mean_estimate_error(train_estimator(train, cfg, MODE_STOCHASTIC)[0], test),
            }

    def test_learned_beats_lda_beats_otsu(self):
        for density, errors in self.errors.items():
            with self.subTest(density=density):
                self.assertLess(errors['lda'], errors['otsu'])
                self.assertLess(errors[MODE_DETERMINISTIC], errors['lda'])
                self.assertLess(errors[MODE_STOCHASTIC], errors['lda'])

    def test_learned_error_well_below_lda_at_low_density(self):
        errors = self.errors[0.3]
        self.assertLess(errors[MODE_DETERMINISTIC], 0.6 * errors['lda'])

    def test_deterministic_close_to_stochastic(self):
        for density, errors in self.errors.items():
            with self.subTest(density=density):
                self.assertLessEqual(errors[MODE_DETERMINISTIC], errors[MODE_STOCHASTIC] + 1.5)

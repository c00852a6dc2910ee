import json
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from PIL import Image

from cdpbench.exceptions import FormatError, ManifestError, ParameterError
from .models import (
    ROLE_ATTACK_TRAIN, ROLE_AUTH_TEST, DatasetManifest, ManifestEntry, ScanRef,
    ppi_to_pps, pps_to_ppi,
)
from .services import (
    generate_template, load_manifest, load_template, measure_density, save_manifest, save_template,
)


class GenerateTemplateTests(SimpleTestCase):
    def test_same_seed_same_bits(self):
        a = generate_template(64, 64, 0.5, seed=7)
        b = generate_template(64, 64, 0.5, seed=7)
        self.assertTrue(a.equals(b))
        self.assertFalse(a.equals(generate_template(64, 64, 0.5, seed=8)))

    def test_density_within_binomial_band(self):
        for seed in range(100):
            t = generate_template(64, 64, 0.30, seed=seed)
            self.assertGreaterEqual(measure_density(t), 0.25)
            self.assertLessEqual(measure_density(t), 0.35)

    def test_large_template_density_is_close_to_nominal(self):
        for density in (0.3, 0.5):
            t = generate_template(512, 512, density, seed=11)
            self.assertAlmostEqual(measure_density(t), density, delta=0.01)

    def test_rejects_bad_density_and_size(self):
        for density in (0.0, 1.0, -0.1, 1.5):
            with self.assertRaises(ParameterError):
                generate_template(32, 32, density, seed=0)
        with self.assertRaises(ParameterError):
            generate_template(8, 64, 0.5, seed=0)

    def test_neighbouring_bits_uncorrelated(self):
        left, right = [], []
        for seed in range(1000):
            bits = generate_template(16, 16, 0.4, seed=seed).bits.astype(float)
            left.append(bits[:, :-1].ravel())
            right.append(bits[:, 1:].ravel())
        r = np.corrcoef(np.concatenate(left), np.concatenate(right))[0, 1]
        self.assertLess(abs(r), 0.05)

    def test_bits_are_read_only(self):
        t = generate_template(16, 16, 0.5, seed=1)
        with self.assertRaises(ValueError):
            t.bits[0, 0] = 1


class ResolutionTests(SimpleTestCase):
    def test_nominal_resolutions(self):
        self.assertEqual(ppi_to_pps(6400), 8)
        self.assertEqual(ppi_to_pps(2400), 3)
        self.assertEqual(pps_to_ppi(8), 6400)
        self.assertEqual(pps_to_ppi(3), 2400)


class TemplateFileTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_save_then_load_keeps_bits_and_metadata(self):
        t = generate_template(32, 48, 0.35, seed=11, template_id=5)
        loaded = load_template(save_template(t, self.root / 't.png'))
        self.assertTrue(loaded.equals(t))
        self.assertEqual(loaded.id, 5)
        self.assertEqual(loaded.seed, 11)
        self.assertAlmostEqual(loaded.density, 0.35)

    def test_loads_8_bit_and_16_bit_binary_images(self):
        bits = generate_template(16, 16, 0.5, seed=3).bits
        Image.fromarray((bits * 255).astype(np.uint8)).save(self.root / 'l.png')
        Image.fromarray((bits.astype(np.uint16) * 65535)).save(self.root / 'i16.png')
        self.assertTrue(np.array_equal(load_template(self.root / 'l.png').bits, bits))
        self.assertTrue(np.array_equal(load_template(self.root / 'i16.png').bits, bits))

    def test_rejects_non_binary_grayscale(self):
        Image.fromarray(np.full((16, 16), 128, dtype=np.uint8)).save(self.root / 'gray.png')
        with self.assertRaises(FormatError):
            load_template(self.root / 'gray.png')

    def test_rejects_color_and_missing_files(self):
        Image.new('RGB', (16, 16)).save(self.root / 'rgb.png')
        with self.assertRaises(FormatError):
            load_template(self.root / 'rgb.png')
        with self.assertRaises(FormatError):
            load_template(self.root / 'missing.png')


class ManifestTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        for i in range(3):
            save_template(generate_template(16, 16, 0.5, seed=i, template_id=i), self.root / f't{i}.png')

    def tearDown(self):
        self.tmp.cleanup()

    def _entries(self):
        return (
            ManifestEntry(0, 0.5, Path('t0.png'), ROLE_ATTACK_TRAIN),
            ManifestEntry(1, 0.5, Path('t1.png'), ROLE_AUTH_TEST),
            ManifestEntry(2, 0.5, Path('t2.png'), ROLE_AUTH_TEST),
        )

    def _write(self, entries):
        payload = {'entries': entries}
        (self.root / 'manifest.json').write_text(json.dumps(payload))
        return self.root / 'manifest.json'

    def test_save_then_load(self):
        manifest = DatasetManifest(self._entries(), root=self.root)
        loaded = load_manifest(save_manifest(manifest, self.root / 'manifest.json'))
        self.assertEqual([e.id for e in loaded.by_role(ROLE_AUTH_TEST)], [1, 2])
        self.assertEqual(loaded.densities, [0.5])
        self.assertEqual(loaded.template_path(loaded.entries[0]), self.root / 't0.png')

    def test_template_in_both_roles_is_rejected(self):
        path = self._write([
            {'id': 0, 'density': 0.5, 'template_path': 't0.png', 'role': ROLE_ATTACK_TRAIN},
            {'id': 1, 'density': 0.5, 'template_path': 't0.png', 'role': ROLE_AUTH_TEST},
        ])
        with self.assertRaises(ManifestError):
            load_manifest(path)

    def test_missing_file_unknown_role_and_duplicates(self):
        cases = [
            [{'id': 0, 'density': 0.5, 'template_path': 'nope.png', 'role': ROLE_AUTH_TEST}],
            [{'id': 0, 'density': 0.5, 'template_path': 't0.png', 'role': 'validation'}],
            [{'id': 0, 'density': 0.5, 'template_path': 't0.png', 'role': ROLE_AUTH_TEST},
             {'id': 0, 'density': 0.5, 'template_path': 't1.png', 'role': ROLE_AUTH_TEST}],
            [],
        ]
        for entries in cases:
            with self.assertRaises(ManifestError):
                load_manifest(self._write(entries))

    def test_with_scans_replaces_same_printer_and_resolution(self):
        manifest = DatasetManifest(self._entries(), root=self.root)
        manifest = manifest.with_scans({1: ScanRef('P55', 6400, Path('a.png'))})
        manifest = manifest.with_scans({1: ScanRef('P55', 6400, Path('b.png'))})
        entry = manifest.entries[1]
        self.assertEqual(len(entry.scans), 1)
        self.assertEqual(manifest.scan_path(entry, 'P55', 6400), self.root / 'b.png')
        self.assertIsNone(manifest.scan_path(entry, 'P76', 6400))
        self.assertEqual(entry.scans[0].pps, 8)

import json
import tempfile
from pathlib import Path

from django.conf import settings
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, tag

from cdpbench.exceptions import ParameterError, StageError
from patterns.services import load_manifest
from printchan.calibration import printer_preset
from .models import config_from_dict, load_config
from .stages import (
    Layout, estimator_labels, fake_seed, run_all, run_authenticate, run_classify, run_generate,
    run_printsim,
)

TINY = {
    'name': 'tiny',
    'templates': {'n': 16, 'm': 16, 'densities': [0.3, 0.5], 'counts': [20, 30],
                  'base_seed': 1, 'attack_train_count': 8},
    'channel': {'printers': {'P55': {'preset': 'P55'}, 'P76': {'preset': 'P76'}}},
    'attack': {'kinds': ['otsu', 'lda', 'learned'], 'modes': ['deterministic'],
               'train': {'epochs': 1, 'steps_per_epoch': 4, 'batch_size': 4, 'crop': 16, 'critic_patch': 8,
                         'base_channels': 4}},
    'classify': {'train_size': 10, 'runs': 2},
    'report': {'resolution': 10},
}


def tiny(**changes):
    data = json.loads(json.dumps(TINY))
    for section, values in changes.items():
        data.setdefault(section, {}).update(values)
    return config_from_dict(data)


class ConfigTests(SimpleTestCase):
    def test_shipped_configs_load(self):
        desk = load_config(Path(settings.BASE_DIR) / 'experiments' / 'configs' / 'desk.json')
        full = load_config(Path(settings.BASE_DIR) / 'experiments' / 'configs' / 'full.json')
        self.assertEqual((desk.templates.n, desk.templates.total), (64, 200))
        self.assertEqual((full.templates.n, full.templates.total), (228, 1008))
        self.assertEqual(full.classify.train_size, 144)
        self.assertEqual(desk.channel.tags, ('P55', 'P76'))
        self.assertEqual(full.attack.labels,
                         ('otsu', 'lda', 'learned-deterministic', 'learned-stochastic'))

    def test_printer_override_starts_from_preset(self):
        cfg = tiny(channel={'printers': {'P55': {'preset': 'P55', 'noise_std': 0.05}}})
        params = cfg.channel.printer('P55')
        self.assertEqual(params.noise_std, 0.05)
        self.assertEqual(params.psf_sigma, 0.25)
        self.assertEqual(params.jitter, printer_preset('P55').jitter)
        with self.assertRaises(ParameterError):
            cfg.channel.printer('HP99')

    def test_counts_must_cover_the_protocol(self):
        with self.assertRaises(ParameterError):
            tiny(classify={'train_size': 25})
        with self.assertRaises(ParameterError):
            tiny(templates={'counts': [0, 30]})

    def test_unknown_keys_are_rejected(self):
        with self.assertRaises(ParameterError):
            tiny(classify={'kernel': 'linear'})

    def test_section_hashes_track_only_their_section(self):
        a, b = tiny(), tiny(classify={'runs': 3})
        self.assertEqual(a.section_hash('templates'), b.section_hash('templates'))
        self.assertNotEqual(a.section_hash('classify'), b.section_hash('classify'))
        self.assertNotEqual(a.hash, b.hash)

    def test_seed_override_reseeds_every_random_stage(self):
        cfg = tiny().with_overrides(seed=9, output_dir='/tmp/x')
        self.assertEqual(cfg.templates.base_seed, 9)
        self.assertEqual(cfg.attack.train.seed, 9)
        self.assertEqual(cfg.classify.seed, 9)
        self.assertEqual(cfg.output_dir, '/tmp/x')

    def test_estimator_label_filters(self):
        cfg = tiny(attack={'modes': ['deterministic', 'stochastic']})
        self.assertEqual(estimator_labels(cfg, kind='learned', mode='stochastic'), ('learned-stochastic',))
        self.assertEqual(estimator_labels(cfg, kind='otsu'), ('otsu',))

    def test_fake_families_get_distinct_seeds(self):
        params = tiny().channel.printer('P55')
        seeds = {fake_seed(params, 3, a, b) for a in ('P55', 'P76') for b in ('P55', 'P76')}
        self.assertEqual(len(seeds), 4)


class StageTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.layout = Layout(self.tmp.name)
        self.cfg = tiny()

    def tearDown(self):
        self.tmp.cleanup()

    def test_generate_writes_templates_and_roles(self):
        self.assertEqual(run_generate(self.cfg, self.layout), 50)
        manifest = load_manifest(self.layout.manifest)
        self.assertEqual(len(manifest.by_role('attack-train')), 16)
        self.assertEqual(len(manifest.by_role('auth-test', 0.5)), 22)
        self.assertIsNone(run_generate(self.cfg, self.layout))

    def test_generate_is_reproducible(self):
        run_generate(self.cfg, self.layout)
        first = self.layout.template(0.5, 30).read_bytes()
        run_generate(self.cfg, self.layout, force=True)
        self.assertEqual(first, self.layout.template(0.5, 30).read_bytes())

    def test_missing_upstream_names_the_stage(self):
        with self.assertRaises(StageError) as ctx:
            run_printsim(self.cfg, self.layout, 'P55')
        self.assertEqual(ctx.exception.stage, 'generate')
        with self.assertRaises(StageError) as ctx:
            run_classify(self.cfg, self.layout)
        self.assertEqual(ctx.exception.stage, 'authenticate')

    def test_printsim_adds_both_resolutions_and_drops_downstream_stamps(self):
        run_generate(self.cfg, self.layout)
        run_printsim(self.cfg, self.layout, 'P55')
        manifest = load_manifest(self.layout.manifest)
        entry = manifest.entries[0]
        self.assertIsNotNone(manifest.scan_path(entry, 'P55', 6400))
        self.assertIsNotNone(manifest.scan_path(entry, 'P55', 2400))
        run_generate(self.cfg, self.layout, force=True)
        self.assertFalse(self.layout.stamp('printsim.P55').exists())

    def test_unknown_printer(self):
        run_generate(self.cfg, self.layout)
        with self.assertRaises(ParameterError):
            run_printsim(self.cfg, self.layout, 'HP99')


class CommandTests(SimpleTestCase):
    def test_missing_stage_becomes_command_error(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'tiny.json'
            path.write_text(json.dumps(TINY))
            with self.assertRaises(CommandError) as ctx:
                call_command('classify', config=str(path), out=str(Path(tmp) / 'out'))
        self.assertIn('authenticate', str(ctx.exception))

    def test_generate_command(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'tiny.json'
            path.write_text(json.dumps(TINY))
            call_command('generate', config=str(path), out=str(Path(tmp) / 'out'), seed=4)
            manifest = load_manifest(Path(tmp) / 'out' / 'dataset' / 'manifest.json')
        self.assertEqual(len(manifest.entries), 50)


def table_bytes(root):
    files = sorted(p for p in Path(root).rglob('*.csv') if 'report' not in p.parts)
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in files}


@tag('slow')
class PipelineTests(SimpleTestCase):
    def test_run_all_twice_gives_identical_tables(self):
        cfg = tiny()
        with tempfile.TemporaryDirectory() as tmp:
            first, second = Layout(Path(tmp) / 'a'), Layout(Path(tmp) / 'b')
            report = run_all(cfg, first, jobs=2)
            run_all(cfg, second, jobs=1)
            a, b = table_bytes(first.root), table_bytes(second.root)
            self.assertTrue(report.exists())
            self.assertIn('tables/table1_p_error.csv', a)
            self.assertIn('tables/svm_two_class_all.csv', a)
            self.assertIn('metrics/P55.csv', a)
            self.assertEqual(a, b)

            # rerunning from authenticate reproduces every later table
            run_authenticate(cfg, first, force=True)
            run_classify(cfg, first)
            self.assertEqual(table_bytes(first.root), a)
            self.assertIsNotNone(run_all(cfg, first))
            self.assertIsNone(run_all(cfg, first))

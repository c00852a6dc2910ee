"""
Pipeline stages behind the management commands.

Each stage reads only the declared outputs of earlier stages under the
output directory and records a stamp (a hash of its config sections, its
arguments and its upstream stamps). A stage whose stamp is current is
skipped unless forced; rerunning a stage drops the stamps of everything
downstream.
"""
import csv
import json
import logging
import zlib
from dataclasses import replace
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from attack.lda import lda_train
from attack.models import KIND_LDA, KIND_LEARNED, KIND_OTSU
from attack.services import (
    binarize_estimate, estimate, otsu_model, p_error, save_model, write_loss_history,
)
from attack.training import train_estimator
from authmetrics.models import METRIC_NAMES
from authmetrics.services import metric_vector, read_scores, write_scores
from cdpbench.exceptions import ParameterError, StageError
from classify.models import ONE_CLASS, TWO_CLASS, ProtocolConfig, ScoreSet
from classify.services import evaluate_protocol, train_one_class, write_error_table
from evalreport.services import emit_report, sha256_file
from patterns.models import (
    ROLE_ATTACK_TRAIN, ROLE_AUTH_TEST, DatasetManifest, ManifestEntry, ScanRef, pps_to_ppi,
)
from patterns.services import generate_template, load_manifest, load_template, save_manifest, save_template
from printchan.services import downscale, load_gray, save_gray, simulate_print_scan
from .models import canonical_hash

logger = logging.getLogger(__name__)

STAGE_ORDER = ('generate', 'printsim', 'attack', 'fakes', 'authenticate', 'classify', 'report')
FAKE_SALT = 0xFA4E


class Layout:
    """Paths of every artifact under one output directory"""

    def __init__(self, root):
        self.root = Path(root)

    @property
    def dataset(self):
        return self.root / 'dataset'

    @property
    def manifest(self):
        return self.dataset / 'manifest.json'

    @property
    def tables(self):
        return self.root / 'tables'

    @property
    def report(self):
        return self.root / 'report'

    def template(self, density, code_id):
        return self.dataset / 'templates' / f'd{round(density * 100):02d}' / f'{code_id:05d}.png'

    def scan(self, printer, pps, code_id):
        return self.root / 'scans' / printer / f'pps{pps}' / f'{code_id:05d}.png'

    def estimate(self, label, printer, code_id):
        return self.root / 'estimates' / label / printer / f'{code_id:05d}.png'

    def model(self, label, printer, density):
        return self.root / 'models' / label / printer / f'd{round(density * 100):02d}.npz'

    def loss_history(self, label, printer, density):
        return self.root / 'models' / label / printer / f'd{round(density * 100):02d}_loss.csv'

    def fake(self, estimated_on, printed_on, code_id):
        return self.root / 'fakes' / f'{estimated_on}-{printed_on}' / f'{code_id:05d}.png'

    def metrics(self, printer):
        return self.root / 'metrics' / f'{printer}.csv'

    def attack_table(self, label, printer):
        return self.tables / 'attack' / f'p_error_{label}_{printer}.csv'

    def stamp(self, key):
        return self.root / '.stamps' / f'{key}.json'


# Stamps

def _stage_of(key):
    return key.split('.', 1)[0]


def read_stamp(layout, key):
    path = layout.stamp(key)
    if not path.exists():
        return None
    return json.loads(path.read_text(encoding='utf-8'))


def require(layout, key, hint):
    stamp = read_stamp(layout, key)
    if stamp is None:
        raise StageError(f"stage '{key}' has not completed; run `manage.py {hint}` first",
                         stage=_stage_of(key))
    return stamp['digest']


def stage_digest(cfg, sections, upstream, **args):
    return canonical_hash({
        'sections': {name: cfg.section_hash(name) for name in sections},
        'upstream': upstream,
        'args': args,
    })


def is_current(layout, key, digest):
    stamp = read_stamp(layout, key)
    return stamp is not None and stamp['digest'] == digest


def write_stamp(layout, key, digest, cfg):
    path = layout.stamp(key)
    path.parent.mkdir(parents=True, exist_ok=True)
    stage = _stage_of(key)
    downstream = STAGE_ORDER[STAGE_ORDER.index(stage) + 1:]
    for other in path.parent.glob('*.json'):
        if _stage_of(other.stem) in downstream:
            other.unlink()
    payload = {'stage': key, 'digest': digest, 'config_hash': cfg.hash}
    tmp = path.with_suffix('.tmp')
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding='utf-8')
    tmp.replace(path)


def _parallel(jobs, func, items):
    return Parallel(n_jobs=jobs, prefer='threads')(delayed(func)(item) for item in items)


def _header(cfg):
    return f'config {cfg.hash}'


def _load_manifest(layout):
    return load_manifest(layout.manifest)


def _relative(layout, path):
    return Path(path).resolve().relative_to(layout.root.resolve()).as_posix()


# generate

def run_generate(cfg, layout, force=False, jobs=1):
    digest = stage_digest(cfg, ['templates'], {})
    if not force and is_current(layout, 'generate', digest):
        logger.info('generate is up to date')
        return None

    tspec = cfg.templates
    work = []
    code_id = 0
    for density, count in zip(tspec.densities, tspec.counts):
        for k in range(count):
            role = ROLE_ATTACK_TRAIN if k < tspec.attack_train_count else ROLE_AUTH_TEST
            work.append((code_id, density, role))
            code_id += 1

    def make(item):
        code_id, density, role = item
        t = generate_template(tspec.n, tspec.m, density, tspec.base_seed ^ code_id, template_id=code_id)
        path = save_template(t, layout.template(density, code_id))
        return ManifestEntry(
            id=code_id, density=float(density),
            template_path=path.relative_to(layout.dataset), role=role,
        )

    entries = _parallel(jobs, make, work)
    save_manifest(DatasetManifest(entries=tuple(entries), root=layout.dataset), layout.manifest)
    write_stamp(layout, 'generate', digest, cfg)
    logger.info('Generated %d templates', len(entries))
    return len(entries)


# printsim

def run_printsim(cfg, layout, printer_tag, force=False, jobs=1):
    params = cfg.channel.printer(printer_tag)
    upstream = {'generate': require(layout, 'generate', 'generate')}
    key = f'printsim.{printer_tag}'
    digest = stage_digest(cfg, ['channel'], upstream, printer=printer_tag)
    if not force and is_current(layout, key, digest):
        logger.info('%s is up to date', key)
        return None

    manifest = _load_manifest(layout)
    scan_pps, auth_pps = cfg.channel.scan_pps, cfg.channel.auth_pps

    def simulate(entry):
        t = load_template(manifest.template_path(entry))
        x = simulate_print_scan(t, params.with_seed(params.seed ^ t.seed), 'original', printer_tag)
        native = save_gray(x, layout.scan(printer_tag, scan_pps, entry.id))
        auth = save_gray(downscale(x, auth_pps), layout.scan(printer_tag, auth_pps, entry.id))
        return entry.id, native, auth

    native_refs, auth_refs = {}, {}
    for code_id, native, auth in _parallel(jobs, simulate, manifest.entries):
        native_refs[code_id] = ScanRef(printer_tag, pps_to_ppi(scan_pps), Path('..') / _relative(layout, native))
        auth_refs[code_id] = ScanRef(printer_tag, pps_to_ppi(auth_pps), Path('..') / _relative(layout, auth))

    manifest = manifest.with_scans(native_refs).with_scans(auth_refs)
    save_manifest(manifest, layout.manifest)
    write_stamp(layout, key, digest, cfg)
    logger.info('Printed and scanned %d codes on %s', len(manifest.entries), printer_tag)
    return len(manifest.entries)


# attack

def estimator_labels(cfg, kind=None, mode=None):
    labels = cfg.attack.labels
    if kind is not None:
        labels = tuple(l for l in labels if l.split('-', 1)[0] == kind)
    if mode is not None:
        labels = tuple(l for l in labels if not l.startswith(KIND_LEARNED) or l.endswith(mode))
    if not labels:
        raise ParameterError(f'no configured estimator matches kind={kind!r} mode={mode!r}')
    return labels


def _pairs(manifest, entries, printer_tag, pps):
    pairs = []
    for entry in entries:
        path = manifest.scan_path(entry, printer_tag, pps_to_ppi(pps))
        if path is None:
            raise StageError(f'code {entry.id} has no {printer_tag} scan at pps {pps}', stage='printsim')
        pairs.append((load_template(manifest.template_path(entry)), load_gray(path)))
    return pairs


def _fit_estimator(cfg, label, pairs):
    pps = cfg.channel.scan_pps
    kind = label.split('-', 1)[0]
    if kind == KIND_OTSU:
        return otsu_model(pps), []
    if kind == KIND_LDA:
        return lda_train(pairs, window=cfg.attack.lda_window), []
    mode = label.split('-', 1)[1]
    train_cfg = replace(cfg.attack.train, pps=pps)
    return train_estimator(pairs, train_cfg, mode=mode)


def run_attack_label(cfg, layout, label, printer_tag, force=False, jobs=1):
    upstream = {f'printsim.{printer_tag}': require(layout, f'printsim.{printer_tag}',
                                                   f'printsim --printer {printer_tag}')}
    key = f'attack.{label}-{printer_tag}'
    digest = stage_digest(cfg, ['attack'], upstream, label=label, printer=printer_tag)
    if not force and is_current(layout, key, digest):
        logger.info('%s is up to date', key)
        return None

    manifest = _load_manifest(layout)
    pps = cfg.channel.scan_pps
    rows = []
    for density in manifest.densities:
        train = manifest.by_role(ROLE_ATTACK_TRAIN, density)
        test = manifest.by_role(ROLE_AUTH_TEST, density)
        model, history = _fit_estimator(cfg, label, _pairs(manifest, train, printer_tag, pps))
        save_model(model, layout.model(label, printer_tag, density))
        if history:
            write_loss_history(history, layout.loss_history(label, printer_tag, density))

        def attack_one(entry):
            t, x = _pairs(manifest, [entry], printer_tag, pps)[0]
            t_hat = binarize_estimate(estimate(model, x, entry.id, seed=t.seed), cfg.attack.tau)
            save_template(t_hat, layout.estimate(label, printer_tag, entry.id))
            return p_error(t_hat, t)

        errors = np.array(_parallel(1 if model.kind == KIND_LEARNED else jobs, attack_one, test))
        rows.append((density, len(errors), errors.mean(), errors.std()))
        logger.info('%s on %s, density %.2f: P_error %.2f%%', label, printer_tag, density, errors.mean())

    path = layout.attack_table(label, printer_tag)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='', encoding='utf-8') as f:
        f.write(f'# {_header(cfg)}\n')
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['estimator', 'printer', 'density', 'codes', 'p_error_mean', 'p_error_std'])
        for density, count, mean, std in rows:
            writer.writerow([label, printer_tag, f'{density:.2f}', count, f'{mean:.2f}', f'{std:.2f}'])
    write_stamp(layout, key, digest, cfg)
    return rows


def run_attack(cfg, layout, printer_tag, kind=None, mode=None, force=False, jobs=1):
    cfg.channel.printer(printer_tag)
    return {label: run_attack_label(cfg, layout, label, printer_tag, force, jobs)
            for label in estimator_labels(cfg, kind, mode)}


# fakes

def fake_seed(params, template_seed, estimated_on, printed_on):
    family = zlib.crc32(f'{estimated_on}/{printed_on}'.encode('ascii'))
    return params.seed ^ template_seed ^ FAKE_SALT ^ family


def fake_entries(cfg, manifest):
    return manifest.by_role(ROLE_AUTH_TEST, cfg.attack.fake_density)


def run_fakes(cfg, layout, estimated_on, printed_on, force=False, jobs=1):
    params = cfg.channel.printer(printed_on)
    cfg.channel.printer(estimated_on)
    label = cfg.attack.fake_estimator
    attack_key = f'attack.{label}-{estimated_on}'
    upstream = {attack_key: require(layout, attack_key, f'attack --printer {estimated_on}')}
    key = f'fakes.{estimated_on}-{printed_on}'
    digest = stage_digest(cfg, ['channel'], upstream, estimated_on=estimated_on, printed_on=printed_on)
    if not force and is_current(layout, key, digest):
        logger.info('%s is up to date', key)
        return None

    manifest = _load_manifest(layout)
    auth_pps = cfg.channel.auth_pps

    def reprint(entry):
        original = load_template(manifest.template_path(entry))
        t_hat = load_template(layout.estimate(label, estimated_on, entry.id), template_id=entry.id)
        seed = fake_seed(params, original.seed, estimated_on, printed_on)
        f = simulate_print_scan(t_hat, params.with_seed(seed), 'fake', printed_on)
        save_gray(downscale(f, auth_pps), layout.fake(estimated_on, printed_on, entry.id))
        return entry.id

    done = _parallel(jobs, reprint, fake_entries(cfg, manifest))
    write_stamp(layout, key, digest, cfg)
    logger.info('Produced %d fakes f^%s/%s', len(done), estimated_on, printed_on)
    return len(done)


# authenticate

def run_authenticate(cfg, layout, force=False, jobs=1):
    tags = cfg.channel.tags
    upstream = {}
    for a in tags:
        upstream[f'printsim.{a}'] = require(layout, f'printsim.{a}', f'printsim --printer {a}')
        for b in tags:
            upstream[f'fakes.{a}-{b}'] = require(layout, f'fakes.{a}-{b}',
                                                 f'fakes --estimated-on {a} --printed-on {b}')
    digest = stage_digest(cfg, ['auth'], upstream)
    if not force and is_current(layout, 'authenticate', digest):
        logger.info('authenticate is up to date')
        return None

    manifest = _load_manifest(layout)
    entries = fake_entries(cfg, manifest)
    auth_ppi = pps_to_ppi(cfg.channel.auth_pps)
    theta = cfg.auth

    for a in tags:
        def score(entry):
            t = load_template(manifest.template_path(entry))
            rows = [(entry.id, a, '', 'original',
                     metric_vector(t, load_gray(manifest.scan_path(entry, a, auth_ppi)), theta))]
            for b in tags:
                y = load_gray(layout.fake(a, b, entry.id))
                rows.append((entry.id, a, b, 'fake' if b == a else 'fake-cross', metric_vector(t, y, theta)))
            return rows

        rows = [row for group in _parallel(jobs, score, entries) for row in group]
        write_scores(rows, layout.metrics(a), _header(cfg))
        logger.info('Scored %d scans for test group %s', len(rows), a)

    write_stamp(layout, 'authenticate', digest, cfg)
    return len(entries)


# classify

def _scoreset(rows, label=None, attack_printer=None):
    picked = [(code_id, v) for code_id, _, ap, cls, v in rows
              if (label is None or cls == label or (label == 'fakes' and cls.startswith('fake')))
              and (attack_printer is None or ap == attack_printer)]
    if not picked:
        return ScoreSet(np.zeros((0, len(METRIC_NAMES))), np.zeros(0, dtype=np.int64))
    return ScoreSet(np.array([v.as_tuple() for _, v in picked]), np.array([c for c, _ in picked]))


def classification_rows(cfg, scores):
    """(table, subset, trained_on, P_D, P_A, ProtocolConfig, train fakes) for every table row."""
    cspec = cfg.classify
    tags = cfg.channel.tags
    common = dict(train_size=cspec.train_size, runs=cspec.runs, nu=cspec.nu, gamma=cspec.gamma,
                  C=cspec.C, seed=cspec.seed)
    jobs = []
    for subset in cspec.pairs:
        for d in tags:
            for a in tags:
                jobs.append(('svm_one_class_pairs', tuple(subset), f'x{d}', d, a,
                             ProtocolConfig(kind=ONE_CLASS, metric_subset=tuple(subset), **common), None))
    for d in tags:
        for a in tags:
            jobs.append(('svm_one_class_all', METRIC_NAMES, f'x{d}', d, a,
                         ProtocolConfig(kind=ONE_CLASS, metric_subset=METRIC_NAMES, **common), None))
    for d in tags:
        for b in tags:
            for a in tags:
                jobs.append(('svm_two_class_all', METRIC_NAMES, f'x{d}+f{d}/{b}', d, a,
                             ProtocolConfig(kind=TWO_CLASS, metric_subset=METRIC_NAMES, **common),
                             _scoreset(scores[d], 'fakes', b)))
    return jobs


def run_classify(cfg, layout, force=False, jobs=1):
    upstream = {'authenticate': require(layout, 'authenticate', 'authenticate')}
    digest = stage_digest(cfg, ['classify'], upstream)
    if not force and is_current(layout, 'classify', digest):
        logger.info('classify is up to date')
        return None

    scores = {a: read_scores(layout.metrics(a)) for a in cfg.channel.tags}

    def evaluate(item):
        table, subset, trained_on, d, a, protocol, train_fakes = item
        rates = evaluate_protocol(
            _scoreset(scores[d], 'original'),
            train_fakes if train_fakes is not None else _scoreset(scores[d], 'fakes'),
            protocol,
            test_originals=_scoreset(scores[a], 'original'),
            test_fakes=_scoreset(scores[a], 'fakes'),
        )
        return table, (subset, trained_on, d, a, rates)

    tables = {}
    for table, row in _parallel(jobs, evaluate, classification_rows(cfg, scores)):
        tables.setdefault(table, []).append(row)
    for table, rows in tables.items():
        write_error_table(rows, layout.tables / f'{table}.csv', _header(cfg))
    write_stamp(layout, 'classify', digest, cfg)
    logger.info('Wrote %d classification tables', len(tables))
    return tables


# report

def assemble_attack_table(cfg, layout):
    """Mean P_error per estimator and printer (rows) and density (columns)."""
    densities = list(cfg.templates.densities)
    path = layout.tables / 'table1_p_error.csv'
    rows = []
    for label in cfg.attack.labels:
        for printer in cfg.channel.tags:
            source = layout.attack_table(label, printer)
            if not source.exists():
                continue
            with open(source, 'r', encoding='utf-8') as f:
                reader = csv.DictReader(line for line in f if not line.startswith('#'))
                by_density = {float(r['density']): r['p_error_mean'] for r in reader}
            rows.append([label, printer] + [by_density.get(round(d, 2), '') for d in densities])
    if not rows:
        raise StageError('no attack tables found; run `manage.py attack` first', stage='attack')
    with open(path, 'w', newline='', encoding='utf-8') as f:
        f.write(f'# {_header(cfg)}; mean P_error in percent\n')
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['estimator', 'printer'] + [f'd{round(d * 100):02d}' for d in densities])
        writer.writerows(rows)
    return path


def run_report(cfg, layout, force=False, jobs=1):
    upstream = {'classify': require(layout, 'classify', 'classify')}
    for label in cfg.attack.labels:
        for printer in cfg.channel.tags:
            key = f'attack.{label}-{printer}'
            stamp = read_stamp(layout, key)
            if stamp is not None:
                upstream[key] = stamp['digest']
    digest = stage_digest(cfg, ['report'], upstream)
    if not force and is_current(layout, 'report', digest):
        logger.info('report is up to date')
        return None

    tables = {'table1_p_error.csv': assemble_attack_table(cfg, layout)}
    for name in ('svm_one_class_pairs', 'svm_one_class_all', 'svm_two_class_all'):
        path = layout.tables / f'{name}.csv'
        if path.exists():
            tables[f'{name}.csv'] = path

    scores = {a: read_scores(layout.metrics(a)) for a in cfg.channel.tags}
    pair = tuple(cfg.report.region_pair)
    columns = [METRIC_NAMES.index(name) for name in pair]
    models = {}
    for a, rows in scores.items():
        originals = _scoreset(rows, 'original')
        models[a] = train_one_class(originals.vectors[:, columns], nu=cfg.classify.nu,
                                    gamma=cfg.classify.gamma, seed=cfg.classify.seed, features=pair)

    seeds = {
        'templates': cfg.templates.base_seed,
        'training': cfg.attack.train.seed,
        'protocol': cfg.classify.seed,
        'printers': {tag: p.seed for tag, p in sorted(cfg.channel.printers.items())},
    }
    path = emit_report(
        layout.report, scores, tables=tables, models=models, region_pair=pair,
        resolution=cfg.report.resolution, config_echo=cfg.as_dict(), config_hash=cfg.hash,
        seeds=seeds, dataset_hash=sha256_file(layout.manifest),
    )
    write_stamp(layout, 'report', digest, cfg)
    return path


def run_all(cfg, layout, force=False, jobs=1, progress=None):
    """generate -> printsim -> attack -> fakes -> authenticate -> classify -> report."""
    def step(name, func, *args):
        if progress:
            progress(name)
        return func(cfg, layout, *args, force=force, jobs=jobs)

    step('generate', run_generate)
    for tag in cfg.channel.tags:
        step(f'printsim {tag}', run_printsim, tag)
    for tag in cfg.channel.tags:
        step(f'attack {tag}', run_attack, tag)
    for a in cfg.channel.tags:
        for b in cfg.channel.tags:
            step(f'fakes {a}/{b}', run_fakes, a, b)
    step('authenticate', run_authenticate)
    step('classify', run_classify)
    return step('report', run_report)

"""
ROC/AUC, kernel densities, pairwise scatter data, decision regions and the
report bundle.

ROC curves treat fakes as the positive class; similarity scores
(SSIM, JACCARD, CORR) are flipped to 1 - s first.
"""
import csv
import hashlib
import itertools
import json
import logging
from importlib import metadata
from pathlib import Path

import numpy as np
from scipy import stats

from authmetrics.models import METRIC_NAMES
from classify.services import rbf_kernel
from cdpbench.exceptions import ParameterError
from .models import FLIPPED_METRICS, DecisionRegion, DensityCurve, RocCurve, trapezoid

logger = logging.getLogger(__name__)

KDE_POINTS = 512
KDE_SPAN = 3.0
REPORT_PACKAGES = ('Django', 'numpy', 'scipy', 'torch', 'matplotlib', 'Pillow', 'python-decouple')


def roc(orig_scores, fake_scores, flip=False):
    """Enumerate every pooled threshold; a score at or above it is called fake."""
    orig = np.asarray(orig_scores, dtype=np.float64).ravel()
    fake = np.asarray(fake_scores, dtype=np.float64).ravel()
    if orig.size == 0 or fake.size == 0:
        raise ParameterError('ROC needs at least one original and one fake score')
    if flip:
        orig, fake = 1.0 - orig, 1.0 - fake

    thresholds = np.unique(np.concatenate([orig, fake]))[::-1]
    orig_sorted = np.sort(orig)
    fake_sorted = np.sort(fake)
    fpr = (orig.size - np.searchsorted(orig_sorted, thresholds, side='left')) / orig.size
    tpr = (fake.size - np.searchsorted(fake_sorted, thresholds, side='left')) / fake.size

    fpr = np.concatenate([[0.0], fpr])
    tpr = np.concatenate([[0.0], tpr])
    thresholds = np.concatenate([[np.inf], thresholds])
    auc = float(trapezoid(tpr, fpr))
    return RocCurve(fpr=fpr, tpr=tpr, thresholds=thresholds, auc=auc, flipped=flip)


def silverman_bandwidth(x):
    """0.9 min(sd, IQR / 1.34) n^(-1/5); falls back to sd when the IQR vanishes."""
    sd = float(np.std(x, ddof=1))
    spread = float(stats.iqr(x)) / 1.34
    scale = min(sd, spread) if spread > 0 else sd
    return 0.9 * scale * len(x) ** -0.2


def kde(scores, bandwidth=None):
    x = np.asarray(scores, dtype=np.float64).ravel()
    if x.size < 2:
        raise ParameterError('KDE needs at least 2 scores')
    h = float(bandwidth) if bandwidth is not None else silverman_bandwidth(x)
    if h <= 0:
        h = 1e-3 * max(1.0, float(np.abs(x).max()))
        logger.warning('Zero-spread scores; KDE bandwidth set to %g', h)

    grid = np.linspace(x.min() - KDE_SPAN * h, x.max() + KDE_SPAN * h, KDE_POINTS)
    density = stats.norm.pdf((grid[:, None] - x[None, :]) / h).mean(axis=1) / h
    return DensityCurve(grid=grid, density=density, bandwidth=h)


def metric_pairs(names=METRIC_NAMES):
    return list(itertools.combinations(names, 2))


def scatter_table(rows, path, header_comment=None):
    """
    Long-format CSV of every metric pair. rows are (code_id, class, MetricVector).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + '.tmp')
    with open(tmp, 'w', newline='', encoding='utf-8') as f:
        if header_comment:
            f.write(f'# {header_comment}\n')
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['metric_x', 'metric_y', 'code_id', 'class', 'x', 'y'])
        for mx, my in metric_pairs():
            ix, iy = METRIC_NAMES.index(mx), METRIC_NAMES.index(my)
            for code_id, label, v in rows:
                values = v.as_tuple()
                writer.writerow([mx, my, code_id, label, repr(values[ix]), repr(values[iy])])
    tmp.replace(path)
    return path


def decision_region(model, pair, resolution=100):
    """Decision values over the standardized training box expanded by 1 on every side."""
    if model.n_features != 2:
        raise ParameterError(f'decision regions need a two-feature model, got {model.n_features}')
    if len(model.support_vectors) == 0:
        raise ParameterError('model has no support vectors')
    if resolution < 2:
        raise ParameterError(f'resolution must be >= 2, got {resolution}')

    lower, upper = model.bounds
    zx = np.linspace(lower[0] - 1.0, upper[0] + 1.0, resolution)
    zy = np.linspace(lower[1] - 1.0, upper[1] + 1.0, resolution)
    gx, gy = np.meshgrid(zx, zy)
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    values = rbf_kernel(grid, model.support_vectors, model.gamma) @ model.dual_coef - model.rho

    scale, mean = model.standardization.scale, model.standardization.mean
    return DecisionRegion(
        pair=tuple(pair),
        xs=zx * scale[0] + mean[0],
        ys=zy * scale[1] + mean[1],
        values=values.reshape(resolution, resolution),
    )


# Report bundle

def sha256_file(path):
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 16), b''):
            digest.update(chunk)
    return digest.hexdigest()


def package_versions():
    versions = {}
    for name in REPORT_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = None
    return versions


def _write_csv(path, header, rows, header_comment=None):
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + '.tmp')
    with open(tmp, 'w', newline='', encoding='utf-8') as f:
        if header_comment:
            f.write(f'# {header_comment}\n')
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(header)
        writer.writerows(rows)
    tmp.replace(path)
    return path


def _column(rows, label, metric):
    i = METRIC_NAMES.index(metric)
    return np.array([v.as_tuple()[i] for _, _, _, cls, v in rows if cls == label])


def auc_table(scores):
    """(printer, metric, orientation, auc) for originals against same-printer fakes."""
    table = []
    curves = {}
    for printer in sorted(scores):
        rows = scores[printer]
        for metric in METRIC_NAMES:
            curve = roc(_column(rows, 'original', metric), _column(rows, 'fake', metric),
                        flip=metric in FLIPPED_METRICS)
            curves[(printer, metric)] = curve
            table.append((printer, metric, curve.orientation, f'{curve.auc:.4f}'))
    return table, curves


def emit_report(report_dir, scores, tables=None, models=None, region_pair=('hamming', 'ssim'),
                resolution=100, config_echo=None, config_hash='', seeds=None, dataset_hash=None):
    """
    Write the report bundle:

        tables/   copied experiment tables, roc_auc.csv, scatter_<printer>.csv,
                  decision_<printer>.csv
        figures/  ROC, KDE, scatter and decision-region SVGs
        manifest.json

    `scores` maps each printer tag to rows as returned by read_scores;
    `tables` maps output names to CSV files produced by earlier stages;
    `models` maps printer tags to two-feature one-class SVMs on region_pair.
    """
    from . import plots

    report_dir = Path(report_dir)
    tables_dir = report_dir / 'tables'
    figures_dir = report_dir / 'figures'
    comment = f'config {config_hash}; fakes are the positive class'

    written = []
    for name, source in sorted((tables or {}).items()):
        target = tables_dir / name
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(Path(source).read_bytes())
        written.append(target)

    rows, curves = auc_table(scores)
    written.append(_write_csv(tables_dir / 'roc_auc.csv', ['printer', 'metric', 'orientation', 'auc'],
                              rows, comment))

    for printer in sorted(scores):
        printer_rows = scores[printer]
        plots.plot_roc({m: curves[(printer, m)] for m in METRIC_NAMES},
                       figures_dir / f'roc_{printer}.svg', f'ROC, printer {printer}')

        for metric in METRIC_NAMES:
            densities = {}
            for label in ('original', 'fake', 'fake-cross'):
                values = _column(printer_rows, label, metric)
                if values.size >= 2:
                    densities[label] = (values, kde(values))
            plots.plot_densities(densities, figures_dir / f'kde_{printer}_{metric}.svg',
                                 f'{metric.upper()}, printer {printer}')

        labelled = [(code_id, cls, v) for code_id, _, _, cls, v in printer_rows]
        written.append(scatter_table(labelled, tables_dir / f'scatter_{printer}.csv', comment))
        plots.plot_scatter(labelled, figures_dir / f'scatter_{printer}.svg', f'Printer {printer}')

    for printer, model in sorted((models or {}).items()):
        region = decision_region(model, region_pair, resolution)
        grid_rows = [
            (repr(float(x)), repr(float(y)), repr(float(region.values[r, c])))
            for r, y in enumerate(region.ys) for c, x in enumerate(region.xs)
        ]
        written.append(_write_csv(tables_dir / f'decision_{printer}.csv',
                                  [region_pair[0], region_pair[1], 'decision'], grid_rows, comment))
        labelled = [(code_id, cls, v) for code_id, _, _, cls, v in scores.get(printer, [])]
        plots.plot_region(region, labelled, figures_dir / f'decision_{printer}.svg',
                          f'One-class SVM, printer {printer}')

    manifest = {
        'config': config_echo,
        'config_hash': config_hash,
        'seeds': seeds or {},
        'versions': package_versions(),
        'dataset_manifest_sha256': dataset_hash,
        'tables': {str(p.relative_to(report_dir)): sha256_file(p) for p in sorted(written)},
        'figures': sorted(str(p.relative_to(report_dir)) for p in figures_dir.glob('*.svg')),
    }
    manifest_path = report_dir / 'manifest.json'
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding='utf-8')
    logger.info('Report written to %s (%d tables)', report_dir, len(written))
    return manifest_path

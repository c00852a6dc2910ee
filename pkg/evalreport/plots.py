"""
Minimal SVG figures. Output is deterministic: fixed hash salt, no date.
"""
from pathlib import Path

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402

from authmetrics.models import METRIC_NAMES  # noqa: E402

matplotlib.rcParams['svg.hashsalt'] = 'cdpbench'

CLASS_COLORS = {'original': 'tab:blue', 'fake': 'tab:red', 'fake-cross': 'tab:orange'}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format='svg', metadata={'Date': None})
    plt.close(fig)
    return path


def plot_roc(curves, path, title):
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    for name, curve in curves.items():
        ax.plot(curve.fpr, curve.tpr, label=f'{name.upper()} ({curve.orientation}) AUC={curve.auc:.3f}')
    ax.plot([0, 1], [0, 1], color='grey', linestyle=':', linewidth=0.8)
    ax.set_xlabel('False positive rate')
    ax.set_ylabel('True positive rate')
    ax.set_title(title)
    ax.legend(fontsize=7, loc='lower right')
    return _save(fig, path)


def plot_densities(densities, path, title):
    """densities: label -> (raw values, DensityCurve)."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, (values, curve) in densities.items():
        color = CLASS_COLORS.get(label)
        ax.hist(values, bins=30, density=True, alpha=0.3, color=color)
        ax.plot(curve.grid, curve.density, color=color, label=label)
    ax.set_title(title)
    ax.set_ylabel('Density')
    if densities:
        ax.legend(fontsize=7)
    return _save(fig, path)


def plot_scatter(rows, path, title):
    """All six metric pairs, rows are (code_id, class, MetricVector)."""
    pairs = [(i, j) for i in range(len(METRIC_NAMES)) for j in range(i + 1, len(METRIC_NAMES))]
    fig, axes = plt.subplots(2, 3, figsize=(10, 6.5))
    for ax, (i, j) in zip(axes.ravel(), pairs):
        for label, color in CLASS_COLORS.items():
            points = [v.as_tuple() for _, cls, v in rows if cls == label]
            if points:
                ax.scatter([p[i] for p in points], [p[j] for p in points], s=4, color=color, label=label)
        ax.set_xlabel(METRIC_NAMES[i].upper())
        ax.set_ylabel(METRIC_NAMES[j].upper())
    axes[0, 0].legend(fontsize=7)
    fig.suptitle(title)
    fig.tight_layout()
    return _save(fig, path)


def plot_region(region, rows, path, title):
    ix, iy = METRIC_NAMES.index(region.pair[0]), METRIC_NAMES.index(region.pair[1])
    fig, ax = plt.subplots(figsize=(5, 4.5))
    ax.contourf(region.xs, region.ys, region.accepted.astype(float), levels=[-0.5, 0.5, 1.5],
                colors=['#f3d9d9', '#d9e6f3'])
    ax.contour(region.xs, region.ys, region.values, levels=[0.0], colors='black', linewidths=0.8)
    for label, color in CLASS_COLORS.items():
        points = [v.as_tuple() for _, cls, v in rows if cls == label]
        if points:
            ax.scatter([p[ix] for p in points], [p[iy] for p in points], s=4, color=color, label=label)
    ax.set_xlabel(region.pair[0].upper())
    ax.set_ylabel(region.pair[1].upper())
    ax.set_title(title)
    if rows:
        ax.legend(fontsize=7)
    return _save(fig, path)

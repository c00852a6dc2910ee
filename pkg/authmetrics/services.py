"""
Defender-side preprocessing and the four similarity scores between a
template and a scan.

HAMMING and JACCARD compare symbol-level bits after Otsu binarization;
SSIM and CORR compare the normalized grayscale scan with the upsampled
template at the scan's resolution.
"""
import csv
import logging
from pathlib import Path

import numpy as np
from scipy import ndimage

from attack.otsu import threshold_symbols
from cdpbench.exceptions import DimensionError
from patterns.models import BinaryTemplate
from patterns.services import measure_density
from printchan.services import block_means, register, upsample
from .models import METRIC_NAMES, MetricVector, PreprocessParams

logger = logging.getLogger(__name__)

SSIM_SIGMA = 1.5
SSIM_RADIUS = 5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_DATA_RANGE = 1.0


def normalize(pixels, theta):
    if theta.normalization == 'minmax':
        lo, hi = float(pixels.min()), float(pixels.max())
    else:
        lo, hi = (float(v) for v in np.percentile(pixels, [theta.p_lo, theta.p_hi]))
    if hi - lo <= 1e-12:
        logger.warning('Degenerate dynamic range [%g, %g]; scan left unnormalized', lo, hi)
        return np.clip(pixels, 0.0, 1.0)
    return np.clip((pixels - lo) / (hi - lo), 0.0, 1.0)


def preprocess(y, t, theta=None):
    """a = g_theta(y): register, normalize, and binarize per symbol."""
    theta = theta or PreprocessParams()
    aligned = register(y, t, theta.max_shift)
    a_gray = aligned.with_pixels(normalize(aligned.pixels, theta))
    bits = threshold_symbols(block_means(a_gray))
    a_bin = BinaryTemplate(bits=bits, density=measure_density(bits), id=t.id)
    return a_gray, a_bin


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise DimensionError(f'shapes differ: {a.shape} vs {b.shape}')


def hamming_score(t, a_bin):
    """Fraction of differing symbols."""
    _check_same_shape(t, a_bin)
    return float(np.count_nonzero(t.bits != a_bin.bits)) / t.bits.size


def jaccard_score(t, a_bin):
    """|black(t) & black(a)| / |black(t) | black(a)|, 1.0 for an empty union."""
    _check_same_shape(t, a_bin)
    black_t = t.bits == 0
    black_a = a_bin.bits == 0
    union = np.count_nonzero(black_t | black_a)
    if union == 0:
        return 1.0
    return float(np.count_nonzero(black_t & black_a)) / union


def _gaussian_mean(pixels):
    return ndimage.gaussian_filter(pixels, sigma=SSIM_SIGMA, truncate=SSIM_RADIUS / SSIM_SIGMA, mode='reflect')


def ssim_score(t_up, a_gray):
    """
    Mean SSIM over every 11 x 11 Gaussian window (sigma 1.5) that fits
    entirely inside the image.
    """
    if t_up.shape != a_gray.shape or t_up.pps != a_gray.pps:
        raise DimensionError(f'SSIM inputs differ: {t_up.shape}@{t_up.pps} vs {a_gray.shape}@{a_gray.pps}')
    h, w = t_up.shape
    if h < 2 * SSIM_RADIUS + 1 or w < 2 * SSIM_RADIUS + 1:
        raise DimensionError(f'SSIM needs at least {2 * SSIM_RADIUS + 1} pixels per side, got {h}x{w}')

    x = t_up.pixels
    y = a_gray.pixels
    c1 = (SSIM_K1 * SSIM_DATA_RANGE) ** 2
    c2 = (SSIM_K2 * SSIM_DATA_RANGE) ** 2

    mu_x = _gaussian_mean(x)
    mu_y = _gaussian_mean(y)
    var_x = _gaussian_mean(x * x) - mu_x * mu_x
    var_y = _gaussian_mean(y * y) - mu_y * mu_y
    cov_xy = _gaussian_mean(x * y) - mu_x * mu_y

    ssim_map = ((2 * mu_x * mu_y + c1) * (2 * cov_xy + c2)) / (
        (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    )
    r = SSIM_RADIUS
    return float(ssim_map[r:h - r, r:w - r].mean())


def corr_score(t_up, a_gray):
    """Pearson correlation of the flattened intensities; 0.0 if either is constant."""
    x = np.asarray(t_up.pixels, dtype=np.float64).ravel()
    y = np.asarray(a_gray.pixels, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise DimensionError(f'shapes differ: {t_up.shape} vs {a_gray.shape}')
    x = x - x.mean()
    y = y - y.mean()
    denom = np.sqrt(np.dot(x, x) * np.dot(y, y))
    if denom == 0:
        logger.warning('CORR undefined for a constant input; scoring 0')
        return 0.0
    return float(np.clip(np.dot(x, y) / denom, -1.0, 1.0))


def metric_vector(t, y, theta=None):
    """Preprocess the scan and score it against the template."""
    a_gray, a_bin = preprocess(y, t, theta)
    t_up = upsample(t, a_gray.pps)
    return MetricVector(
        hamming=hamming_score(t, a_bin),
        ssim=ssim_score(t_up, a_gray),
        jaccard=jaccard_score(t, a_bin),
        corr=corr_score(t_up, a_gray),
    )


SCORE_COLUMNS = ('code_id', 'printer_tag', 'attack_printer', 'class') + METRIC_NAMES


def write_scores(rows, path, header_comment=None):
    """
    rows: iterables of (code_id, printer_tag, attack_printer, class, MetricVector).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + '.tmp')
    with open(tmp, 'w', newline='', encoding='utf-8') as f:
        if header_comment:
            f.write(f'# {header_comment}\n')
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(SCORE_COLUMNS)
        for code_id, printer_tag, attack_printer, label, v in rows:
            writer.writerow([code_id, printer_tag, attack_printer, label, *(repr(s) for s in v.as_tuple())])
    tmp.replace(path)
    return path


def read_scores(path):
    """Inverse of write_scores: list of (code_id, printer_tag, attack_printer, class, MetricVector)."""
    rows = []
    with open(path, 'r', encoding='utf-8') as f:
        reader = csv.DictReader(line for line in f if not line.startswith('#'))
        for row in reader:
            rows.append((
                int(row['code_id']), row['printer_tag'], row['attack_printer'], row['class'],
                MetricVector(*(float(row[name]) for name in METRIC_NAMES)),
            ))
    return rows

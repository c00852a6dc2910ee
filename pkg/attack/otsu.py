"""
Otsu's global threshold on symbol-level intensities.
"""
import logging

import numpy as np

from cdpbench.exceptions import ParameterError
from patterns.models import BinaryTemplate
from patterns.services import measure_density
from printchan.services import block_means

logger = logging.getLogger(__name__)

LEVELS = 256


def quantize(values):
    """Map intensities in [0, 1] to the 256 histogram bins."""
    return np.clip(np.rint(np.asarray(values) * (LEVELS - 1)), 0, LEVELS - 1).astype(np.int64)


def histogram(values):
    return np.bincount(quantize(values).ravel(), minlength=LEVELS)


def otsu_threshold(hist):
    """
    Threshold T maximizing the between-class variance of {bins < T} vs
    {bins >= T}. Ties go to the lowest T. Integer histograms are compared
    exactly.

    A histogram with a single occupied bin has no split; its value is
    returned and a warning logged.
    """
    hist = np.asarray(hist)
    if hist.shape != (LEVELS,):
        raise ParameterError(f'expected a {LEVELS}-bin histogram, got shape {hist.shape}')
    if np.any(hist < 0) or hist.sum() <= 0:
        raise ParameterError('histogram must be nonnegative and nonempty')

    if np.all(np.equal(np.mod(hist, 1), 0)):
        counts = [int(c) for c in hist]
    else:
        counts = [float(c) for c in hist]
    total = sum(counts)
    total_sum = sum(i * c for i, c in enumerate(counts))

    best_t, best_num, best_den = None, 0, 1
    n0 = 0
    s0 = 0
    for t in range(1, LEVELS):
        n0 += counts[t - 1]
        s0 += (t - 1) * counts[t - 1]
        n1 = total - n0
        if n0 == 0 or n1 == 0:
            continue
        # between-class variance up to the constant 1 / total^2
        num = (s0 * total - total_sum * n0) ** 2
        den = n0 * n1
        if best_t is None or num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den

    if best_t is None:
        value = int(np.flatnonzero(hist)[0])
        logger.warning('Degenerate histogram: single occupied bin %d, no class split', value)
        return value
    return best_t


def threshold_symbols(means):
    """Binarize symbol means with Otsu: bins below the threshold become black (0)."""
    bins = quantize(means)
    threshold = otsu_threshold(np.bincount(bins.ravel(), minlength=LEVELS))
    return (bins >= threshold).astype(np.uint8)


def otsu_estimate(scan, template_id=0):
    """Block-average each symbol, then global Otsu on the symbol-level image."""
    bits = threshold_symbols(block_means(scan))
    return BinaryTemplate(bits=bits, density=measure_density(bits), id=template_id)

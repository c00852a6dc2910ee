"""
Fisher linear discriminant over symbol neighbourhoods of block-averaged scans.
"""
import logging

import numpy as np
from scipy.special import expit

from cdpbench.exceptions import DimensionError, ParameterError
from printchan.services import block_means
from .models import KIND_LDA, EstimatorModel

logger = logging.getLogger(__name__)

RIDGE = 1e-6
CONDITION_LIMIT = 1e10


def neighbourhood_features(means, window):
    """Rows of the flattened (2w+1)^2 neighbourhood of every symbol, edges replicated."""
    if window < 0:
        raise ParameterError(f'window must be >= 0, got {window}')
    n, m = means.shape
    size = 2 * window + 1
    padded = np.pad(means, window, mode='edge')
    columns = [
        padded[dy:dy + n, dx:dx + m].ravel()
        for dy in range(size) for dx in range(size)
    ]
    return np.stack(columns, axis=1)


def _check_pairs(pairs):
    if not pairs:
        raise ParameterError('at least one (template, scan) pair is required')
    pps = pairs[0][1].pps
    for t, scan in pairs:
        if scan.pps != pps:
            raise DimensionError(f'all scans must share one pps, got {scan.pps} and {pps}')
        if not scan.is_registered_to(t.shape):
            raise DimensionError(f'scan {scan.shape} is not registered to template {t.shape} at pps {pps}')
    return pps


def lda_train(pairs, window=2):
    """
    Learn w and b so that w.x + b >= 0 predicts a white symbol.

    The offset sits at the midpoint of the projected class means. A
    near-singular pooled scatter gets a ridge and a warning.
    """
    pps = _check_pairs(pairs)
    features = np.concatenate([neighbourhood_features(block_means(scan), window) for _, scan in pairs])
    labels = np.concatenate([t.bits.ravel() for t, _ in pairs])

    white = features[labels == 1]
    black = features[labels == 0]
    if len(white) == 0 or len(black) == 0:
        raise ParameterError('training templates must contain both black and white symbols')

    mu_white = white.mean(axis=0)
    mu_black = black.mean(axis=0)
    scatter = (white - mu_white).T @ (white - mu_white) + (black - mu_black).T @ (black - mu_black)
    covariance = scatter / max(len(labels) - 2, 1)

    d = covariance.shape[0]
    if np.linalg.matrix_rank(covariance) < d or np.linalg.cond(covariance) > CONDITION_LIMIT:
        ridge = RIDGE * max(np.trace(covariance) / d, 1e-12)
        logger.warning('Singular within-class scatter (window=%d); adding ridge %.3g', window, ridge)
        covariance = covariance + ridge * np.eye(d)

    weights = np.linalg.solve(covariance, mu_white - mu_black)
    bias = -weights @ (mu_white + mu_black) / 2.0
    return EstimatorModel(kind=KIND_LDA, pps=pps, window=window, weights=weights, bias=float(bias))


def lda_scores(model, scan):
    return neighbourhood_features(block_means(scan), model.window) @ model.weights + model.bias


def lda_estimate(model, scan):
    """Whiteness per symbol: the logistic of the discriminant score."""
    n, m = scan.symbol_shape()
    return expit(lda_scores(model, scan)).reshape(n, m)

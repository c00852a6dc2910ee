"""
Calibration of the printer profiles against the Otsu baseline.

The jitter of a profile is found by bisection on a fixed set of density-50%
codes. The search is deterministic, so every process resolves the same
channel parameters; results are cached per printer tag.
"""
import logging
from dataclasses import replace
from functools import lru_cache

import numpy as np

from attack.otsu import otsu_estimate
from cdpbench.exceptions import ParameterError
from patterns.services import generate_template
from .models import PRINTER_PROFILES
from .services import simulate_print_scan

logger = logging.getLogger(__name__)

CALIBRATION_DENSITY = 0.5
CALIBRATION_CODES = 8
CALIBRATION_SIZE = 48
JITTER_RANGE = (0.0, 0.5)


def mean_otsu_error(params, density=CALIBRATION_DENSITY, codes=CALIBRATION_CODES, size=CALIBRATION_SIZE,
                    first_seed=0):
    """Mean Otsu P_error in percent over `codes` printed templates."""
    errors = []
    for seed in range(first_seed, first_seed + codes):
        t = generate_template(size, size, density, seed=seed, template_id=seed)
        x = simulate_print_scan(t, params.with_seed(params.seed ^ seed))
        errors.append(100.0 * np.mean(otsu_estimate(x).bits != t.bits))
    return float(np.mean(errors))


def calibrate_jitter(params, target, iterations=12, tolerance=0.2, **kwargs):
    """
    Dot placement jitter in JITTER_RANGE whose mean Otsu error is closest to
    `target` percent. A target outside the reachable range returns the
    nearest end and logs a warning.
    """
    lo, hi = JITTER_RANGE

    def error_at(jitter):
        return mean_otsu_error(replace(params, jitter=jitter), **kwargs)

    if error_at(lo) >= target:
        logger.warning('Otsu error without jitter already reaches %.2f%%; using jitter %.3f', target, lo)
        return replace(params, jitter=lo)
    if error_at(hi) <= target:
        logger.warning('Otsu error stays below %.2f%% up to jitter %.3f', target, hi)
        return replace(params, jitter=hi)

    best, best_gap = hi, np.inf
    for _ in range(iterations):
        mid = (lo + hi) / 2.0
        error = error_at(mid)
        if abs(error - target) < best_gap:
            best, best_gap = mid, abs(error - target)
        if best_gap <= tolerance:
            break
        if error < target:
            lo = mid
        else:
            hi = mid
    return replace(params, jitter=round(best, 4))


@lru_cache(maxsize=None)
def printer_preset(tag):
    """Calibrated ChannelParams of a named printer profile."""
    try:
        profile = PRINTER_PROFILES[tag]
    except KeyError:
        raise ParameterError(f'unknown printer preset {tag!r}; known: {sorted(PRINTER_PROFILES)}')
    params = calibrate_jitter(profile.base, profile.otsu_target)
    logger.info('Calibrated printer %s: jitter %.4f for an Otsu error of %.1f%%',
                tag, params.jitter, profile.otsu_target)
    return params


def printer_presets():
    return {tag: printer_preset(tag) for tag in PRINTER_PROFILES}

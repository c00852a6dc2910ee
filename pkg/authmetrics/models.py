from __future__ import annotations

from dataclasses import astuple, dataclass
from typing import Tuple

import numpy as np

from cdpbench.exceptions import ParameterError

METRIC_NAMES = ('hamming', 'ssim', 'jaccard', 'corr')

NORMALIZATIONS = ('minmax', 'percentile')


@dataclass(frozen=True)
class PreprocessParams:
    """g_theta: synchronization, dynamic range normalization, Otsu binarization"""
    max_shift: int = 2
    normalization: str = 'percentile'
    p_lo: float = 1.0
    p_hi: float = 99.0
    binarizer: str = 'otsu'

    def __post_init__(self):
        if self.max_shift < 0:
            raise ParameterError(f'max_shift must be >= 0, got {self.max_shift}')
        if self.normalization not in NORMALIZATIONS:
            raise ParameterError(f'unknown normalization {self.normalization!r}')
        if not 0 <= self.p_lo < self.p_hi <= 100:
            raise ParameterError(f'need 0 <= p_lo < p_hi <= 100, got {self.p_lo}, {self.p_hi}')
        if self.binarizer != 'otsu':
            raise ParameterError(f'unknown binarizer {self.binarizer!r}')


@dataclass(frozen=True)
class MetricVector:
    """v = (HAMMING, SSIM, JACCARD, CORR) in this fixed order"""
    hamming: float
    ssim: float
    jaccard: float
    corr: float

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return astuple(self)

    def as_array(self) -> np.ndarray:
        return np.array(self.as_tuple(), dtype=np.float64)

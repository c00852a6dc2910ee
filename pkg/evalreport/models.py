"""
Result objects behind the report figures and tables.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from cdpbench.exceptions import ParameterError

# numpy 2.0 renamed trapz to trapezoid
trapezoid = getattr(np, 'trapezoid', None) or np.trapz

# similarity metrics are flipped (1 - s) so that larger always means "more fake"
FLIPPED_METRICS = ('ssim', 'jaccard', 'corr')


@dataclass(frozen=True, eq=False)
class RocCurve:
    """Operating points with fakes as the positive class"""
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float
    flipped: bool = False

    def __post_init__(self):
        if len(self.fpr) != len(self.tpr):
            raise ParameterError('fpr and tpr must have the same length')

    @property
    def orientation(self) -> str:
        return '1-s' if self.flipped else 's'


@dataclass(frozen=True, eq=False)
class DensityCurve:
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float

    @property
    def mass(self) -> float:
        return float(trapezoid(self.density, self.grid))


@dataclass(frozen=True, eq=False)
class DecisionRegion:
    """
    Decision values of a two-feature SVM on a regular grid. `xs` / `ys` are
    raw metric values; the grid spans the standardized training box +- 1.
    """
    pair: Tuple[str, str]
    xs: np.ndarray
    ys: np.ndarray
    values: np.ndarray

    @property
    def accepted(self) -> np.ndarray:
        return self.values > 0

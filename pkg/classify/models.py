"""
Kernel classifiers over MetricVectors and their evaluation summaries.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from authmetrics.models import METRIC_NAMES
from cdpbench.exceptions import ParameterError

ONE_CLASS = 'one-class'
TWO_CLASS = 'two-class'
SVM_KINDS = (ONE_CLASS, TWO_CLASS)

LABEL_ORIGINAL = 'original'
LABEL_FAKE = 'fake'


@dataclass(frozen=True, eq=False)
class Standardization:
    """Per-feature affine map to zero mean and unit variance"""
    mean: np.ndarray
    scale: np.ndarray

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.scale

    def inverse(self, Z) -> np.ndarray:
        return np.asarray(Z, dtype=np.float64) * self.scale + self.mean


@dataclass(eq=False)
class SvmModel:
    kind: str
    gamma: float
    support_vectors: np.ndarray
    dual_coef: np.ndarray
    rho: float
    standardization: Standardization
    nu: Optional[float] = None
    C: Optional[float] = None
    support_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    bounds: Tuple[np.ndarray, np.ndarray] = None
    features: Tuple[str, ...] = METRIC_NAMES
    seed: int = 0
    iterations: int = 0

    def __post_init__(self):
        if self.kind not in SVM_KINDS:
            raise ParameterError(f'unknown SVM kind {self.kind!r}')
        if self.kind == ONE_CLASS and not (self.nu is not None and 0 < self.nu <= 1):
            raise ParameterError(f'one-class SVM needs 0 < nu <= 1, got {self.nu}')

    @property
    def n_features(self) -> int:
        return len(self.standardization.mean)


@dataclass(frozen=True)
class ErrorRates:
    """Percentages: mean and spread over protocol runs, and the value of every run"""
    p_miss: float
    p_miss_std: float
    p_fa: float
    p_fa_std: float
    runs: int
    p_miss_runs: Tuple[float, ...] = ()
    p_fa_runs: Tuple[float, ...] = ()


@dataclass(frozen=True)
class ProtocolConfig:
    kind: str = ONE_CLASS
    train_size: int = 144
    runs: int = 20
    metric_subset: Tuple[str, ...] = METRIC_NAMES
    nu: float = 0.01
    gamma: float = 0.3
    C: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SVM_KINDS:
            raise ParameterError(f'unknown SVM kind {self.kind!r}')
        unknown = set(self.metric_subset) - set(METRIC_NAMES)
        if unknown or not self.metric_subset:
            raise ParameterError(f'metric subset must be drawn from {METRIC_NAMES}, got {self.metric_subset}')
        if self.train_size < 2 or self.runs < 1:
            raise ParameterError('train_size must be >= 2 and runs >= 1')

    @property
    def feature_index(self) -> Sequence[int]:
        return [METRIC_NAMES.index(name) for name in self.metric_subset]


@dataclass(frozen=True, eq=False)
class ScoreSet:
    """Metric vectors of one population, each row tagged with its code id"""
    vectors: np.ndarray
    ids: np.ndarray

    def __post_init__(self):
        vectors = np.atleast_2d(np.asarray(self.vectors, dtype=np.float64))
        ids = np.asarray(self.ids, dtype=np.int64)
        if len(vectors) != len(ids):
            raise ParameterError('one code id per vector is required')
        object.__setattr__(self, 'vectors', vectors)
        object.__setattr__(self, 'ids', ids)

    def __len__(self):
        return len(self.ids)

    def select(self, mask) -> 'ScoreSet':
        return ScoreSet(self.vectors[mask], self.ids[mask])

    def sorted(self) -> 'ScoreSet':
        order = np.lexsort(tuple(self.vectors.T[::-1]) + (self.ids,))
        return ScoreSet(self.vectors[order], self.ids[order])

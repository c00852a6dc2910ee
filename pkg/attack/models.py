"""
Estimators of the digital template from a printed-and-scanned code.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional

import numpy as np

from cdpbench.exceptions import ParameterError

KIND_OTSU = 'otsu'
KIND_LDA = 'lda'
KIND_LEARNED = 'learned'
KINDS = (KIND_OTSU, KIND_LDA, KIND_LEARNED)

MODE_DETERMINISTIC = 'deterministic'
MODE_STOCHASTIC = 'stochastic'
MODES = (MODE_DETERMINISTIC, MODE_STOCHASTIC)

# Input noise of the stochastic estimator.
STOCHASTIC_NOISE_STD = 0.001


@dataclass(frozen=True)
class TrainConfig:
    """
    Training of the learned estimator; lam scales the l2 reconstruction term.

    Every epoch runs steps_per_epoch batches of random crops. The critic term
    ramps linearly from zero to adversarial_weight over the first
    adversarial_warmup epochs while the learning rate follows a cosine decay.
    """
    lam: float = 1.0
    adversarial_weight: float = 0.01
    adversarial_warmup: int = 5
    epochs: int = 30
    steps_per_epoch: int = 50
    batch_size: int = 8
    learning_rate: float = 2e-3
    seed: int = 0
    pps: int = 8
    crop: int = 64
    critic_patch: int = 32
    base_channels: int = 16

    def __post_init__(self):
        if self.lam <= 0:
            raise ParameterError(f'lam must be > 0, got {self.lam}')
        if self.adversarial_weight < 0 or self.adversarial_warmup < 0:
            raise ParameterError('adversarial_weight and adversarial_warmup must be >= 0')
        if self.epochs < 1 or self.steps_per_epoch < 1:
            raise ParameterError('epochs and steps_per_epoch must be >= 1')
        if self.batch_size < 1 or self.pps < 1:
            raise ParameterError('batch_size and pps must be >= 1')
        if self.crop < 16 or self.critic_patch < 8:
            raise ParameterError('crop must be >= 16 symbols and critic_patch >= 8')

    def adversarial_weight_at(self, epoch: int) -> float:
        if self.adversarial_warmup == 0:
            return self.adversarial_weight
        return self.adversarial_weight * min(1.0, (epoch - 1) / self.adversarial_warmup)

    def as_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'TrainConfig':
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})


@dataclass(frozen=True)
class LossBreakdown:
    """total = recon + marginal, i.e. -(D_tt^ - D_t) with recon = -D_tt^"""
    epoch: int
    total: float
    recon: float
    marginal: float


@dataclass(frozen=True, eq=False)
class SoftEstimate:
    """Per-symbol posterior whiteness in [0, 1]"""
    values: np.ndarray
    template_id: int = 0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.size and (values.min() < 0.0 or values.max() > 1.0):
            raise ParameterError('soft estimate values must lie in [0, 1]')
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)


@dataclass(eq=False)
class EstimatorModel:
    kind: str
    pps: int
    mode: str = MODE_DETERMINISTIC
    input_noise_std: float = 0.0
    window: int = 0
    weights: Optional[np.ndarray] = None
    bias: float = 0.0
    network: Any = None
    config: Optional[TrainConfig] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f'unknown estimator kind {self.kind!r}')
        if self.mode not in MODES:
            raise ParameterError(f'unknown estimator mode {self.mode!r}')
        if self.mode == MODE_STOCHASTIC and self.input_noise_std <= 0:
            raise ParameterError('a stochastic estimator needs input_noise_std > 0')

    @property
    def label(self) -> str:
        return f'{self.kind}-{self.mode}' if self.kind == KIND_LEARNED else self.kind

"""
Grayscale acquisitions and the parameters of the simulated print-scan channel.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Dict, Tuple

import numpy as np

from cdpbench.exceptions import ParameterError

PROVENANCES = ('original', 'fake', 'estimate-render', 'template')


@dataclass(frozen=True, eq=False)
class GrayImage:
    """An intensity image in [0, 1] with `pps` pixels per printed symbol"""
    pixels: np.ndarray
    pps: int
    provenance: str = 'original'
    printer_tag: str = ''

    def __post_init__(self):
        pixels = np.array(self.pixels, dtype=np.float64)
        pixels.setflags(write=False)
        object.__setattr__(self, 'pixels', pixels)
        if self.pps < 1:
            raise ParameterError(f'pps must be >= 1, got {self.pps}')

    @property
    def shape(self) -> Tuple[int, int]:
        return self.pixels.shape

    def symbol_shape(self) -> Tuple[int, int]:
        h, w = self.pixels.shape
        return h // self.pps, w // self.pps

    def is_registered_to(self, shape) -> bool:
        n, m = shape
        return self.pixels.shape == (n * self.pps, m * self.pps)

    def with_pixels(self, pixels, **changes) -> 'GrayImage':
        return replace(self, pixels=pixels, **changes)


@dataclass(frozen=True)
class ChannelParams:
    """
    Print-scan channel: dot placement, ink spread, optical blur, tone mapping,
    sensor noise.

    psf_sigma is in symbol units, dot_gain is the signed ink-spread radius as
    a fraction of a symbol (positive grows black regions). jitter is the
    standard deviation of each dot's placement error, also in symbol units.
    """
    pps: int = 8
    psf_sigma: float = 0.6
    dot_gain: float = 0.1
    gain: float = 1.0
    offset: float = 0.0
    noise_std: float = 0.02
    jitter: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.pps < 1:
            raise ParameterError(f'pps must be >= 1, got {self.pps}')
        if self.psf_sigma <= 0:
            raise ParameterError(f'psf_sigma must be > 0, got {self.psf_sigma}')
        if not -0.5 <= self.dot_gain <= 0.5:
            raise ParameterError(f'dot_gain must lie in [-0.5, 0.5], got {self.dot_gain}')
        if self.noise_std < 0:
            raise ParameterError(f'noise_std must be >= 0, got {self.noise_std}')
        if not 0 <= self.jitter <= 1:
            raise ParameterError(f'jitter must lie in [0, 1], got {self.jitter}')

    def with_seed(self, seed: int) -> 'ChannelParams':
        return replace(self, seed=int(seed) & 0xFFFFFFFFFFFFFFFF)

    def as_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> 'ChannelParams':
        known = {k: data[k] for k in cls.__dataclass_fields__ if k in data}
        return cls(**known)


@dataclass(frozen=True)
class PrinterProfile:
    """
    A printer before calibration. The dot placement jitter of `base` is tuned
    so that Otsu re-binarization of density-50% codes errs on `otsu_target`
    percent of the symbols.
    """
    tag: str
    base: ChannelParams
    otsu_target: float


# P55 spreads more ink than P76; both blur less than a third of a symbol.
PRINTER_PROFILES = {
    'P55': PrinterProfile('P55', ChannelParams(pps=8, psf_sigma=0.25, dot_gain=0.15, noise_std=0.02,
                                               seed=5500), otsu_target=20.0),
    'P76': PrinterProfile('P76', ChannelParams(pps=8, psf_sigma=0.22, dot_gain=0.12, noise_std=0.02,
                                               seed=7600), otsu_target=18.0),
}


@dataclass(frozen=True)
class Registration:
    """Correction (dy, dx) to apply to a scan, and the correlation reached"""
    shift: Tuple[int, int]
    score: float

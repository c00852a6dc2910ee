"""
Experiment configuration: one JSON file parsed into a frozen dataclass tree.

Every section has a stable sha256 of its canonical JSON form; stage stamps
and table headers record these hashes.
"""
from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, Optional, Tuple

from attack.models import KINDS, MODE_DETERMINISTIC, MODES, TrainConfig
from authmetrics.models import METRIC_NAMES, PreprocessParams
from cdpbench.exceptions import ParameterError
from printchan.calibration import printer_preset, printer_presets
from printchan.models import PRINTER_PROFILES, ChannelParams

SECTIONS = ('templates', 'channel', 'attack', 'auth', 'classify', 'report')


def canonical_hash(data) -> str:
    payload = json.dumps(data, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(payload.encode('utf-8')).hexdigest()


@dataclass(frozen=True)
class TemplateSpec:
    n: int = 64
    m: int = 64
    densities: Tuple[float, ...] = (0.30, 0.35, 0.40, 0.45, 0.50)
    counts: Tuple[int, ...] = (40, 40, 40, 40, 40)
    base_seed: int = 0
    attack_train_count: int = 16

    def __post_init__(self):
        if len(self.densities) != len(self.counts):
            raise ParameterError('templates.densities and templates.counts must have the same length')
        if any(c < 1 for c in self.counts):
            raise ParameterError(f'template counts must be >= 1, got {list(self.counts)}')
        if not 0 <= self.attack_train_count < min(self.counts):
            raise ParameterError('attack_train_count must leave auth-test codes at every density')

    @property
    def total(self) -> int:
        return sum(self.counts)


@dataclass(frozen=True)
class ChannelSpec:
    printers: Dict[str, ChannelParams] = field(default_factory=printer_presets)
    scan_pps: int = 8
    auth_pps: int = 3

    def __post_init__(self):
        if not self.printers:
            raise ParameterError('at least one printer profile is required')
        if self.auth_pps > self.scan_pps:
            raise ParameterError('auth_pps cannot exceed scan_pps')

    def printer(self, tag: str) -> ChannelParams:
        try:
            return self.printers[tag]
        except KeyError:
            raise ParameterError(f'unknown printer tag {tag!r}; configured: {sorted(self.printers)}')

    @property
    def tags(self) -> Tuple[str, ...]:
        return tuple(sorted(self.printers))


@dataclass(frozen=True)
class AttackSpec:
    kinds: Tuple[str, ...] = KINDS
    modes: Tuple[str, ...] = MODES
    lda_window: int = 2
    tau: float = 0.5
    train: TrainConfig = field(default_factory=TrainConfig)
    # estimator whose binarized estimates are re-printed as fakes
    fake_estimator: str = f'learned-{MODE_DETERMINISTIC}'
    fake_density: float = 0.50

    def __post_init__(self):
        unknown = set(self.kinds) - set(KINDS)
        if unknown:
            raise ParameterError(f'unknown estimator kinds {sorted(unknown)}')
        if set(self.modes) - set(MODES):
            raise ParameterError(f'unknown estimator modes {list(self.modes)}')
        if self.fake_estimator not in self.labels:
            raise ParameterError(f'fake_estimator {self.fake_estimator!r} is not one of {self.labels}')

    @property
    def labels(self) -> Tuple[str, ...]:
        labels = []
        for kind in self.kinds:
            if kind == 'learned':
                labels.extend(f'learned-{mode}' for mode in self.modes)
            else:
                labels.append(kind)
        return tuple(labels)


@dataclass(frozen=True)
class ClassifySpec:
    train_size: int = 12
    runs: int = 5
    nu: float = 0.01
    gamma: float = 0.3
    C: float = 1.0
    seed: int = 0
    pairs: Tuple[Tuple[str, str], ...] = tuple(itertools.combinations(METRIC_NAMES, 2))
    # held-out codes required beyond the training codes
    min_held_out: int = 2

    def __post_init__(self):
        for pair in self.pairs:
            if len(pair) != 2 or set(pair) - set(METRIC_NAMES):
                raise ParameterError(f'invalid metric pair {pair}')


@dataclass(frozen=True)
class ReportSpec:
    region_pair: Tuple[str, str] = ('hamming', 'ssim')
    resolution: int = 100


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = 'desk'
    templates: TemplateSpec = field(default_factory=TemplateSpec)
    channel: ChannelSpec = field(default_factory=ChannelSpec)
    attack: AttackSpec = field(default_factory=AttackSpec)
    auth: PreprocessParams = field(default_factory=PreprocessParams)
    classify: ClassifySpec = field(default_factory=ClassifySpec)
    report: ReportSpec = field(default_factory=ReportSpec)
    output_dir: str = 'out'
    source: Optional[str] = None

    def __post_init__(self):
        fake_counts = [c for d, c in zip(self.templates.densities, self.templates.counts)
                       if abs(d - self.attack.fake_density) < 1e-9]
        if not fake_counts:
            raise ParameterError(f'fake_density {self.attack.fake_density} is not a generated density')
        auth_codes = fake_counts[0] - self.templates.attack_train_count
        if auth_codes < self.classify.train_size + self.classify.min_held_out:
            raise ParameterError(
                f'{auth_codes} auth-test codes at density {self.attack.fake_density} cannot hold '
                f'train_size={self.classify.train_size} plus {self.classify.min_held_out} held out'
            )

    def section(self, name: str):
        if name not in SECTIONS:
            raise ParameterError(f'unknown config section {name!r}')
        return getattr(self, name)

    def section_dict(self, name: str) -> Dict:
        value = self.section(name)
        if isinstance(value, ChannelSpec):
            return {
                'printers': {tag: p.as_dict() for tag, p in sorted(value.printers.items())},
                'scan_pps': value.scan_pps,
                'auth_pps': value.auth_pps,
            }
        return json.loads(json.dumps(asdict(value)))

    def section_hash(self, name: str) -> str:
        return canonical_hash(self.section_dict(name))

    def as_dict(self) -> Dict:
        data = {name: self.section_dict(name) for name in SECTIONS}
        data['name'] = self.name
        data['output_dir'] = self.output_dir
        return data

    @property
    def hash(self) -> str:
        return canonical_hash({name: self.section_dict(name) for name in SECTIONS})

    def with_overrides(self, seed=None, output_dir=None) -> 'ExperimentConfig':
        """Apply --seed / --out; a seed reseeds templates, training and the protocol."""
        cfg = self
        if seed is not None:
            cfg = replace(
                cfg,
                templates=replace(cfg.templates, base_seed=int(seed)),
                attack=replace(cfg.attack, train=replace(cfg.attack.train, seed=int(seed))),
                classify=replace(cfg.classify, seed=int(seed)),
            )
        if output_dir:
            cfg = replace(cfg, output_dir=str(output_dir))
        return cfg


def _tuple(value):
    return tuple(tuple(v) if isinstance(v, list) else v for v in value)


def config_from_dict(data: Dict, source=None) -> ExperimentConfig:
    try:
        t = data.get('templates', {})
        templates = TemplateSpec(**{k: (_tuple(v) if isinstance(v, list) else v) for k, v in t.items()})

        c = data.get('channel', {})
        printers = {}
        for tag, raw in (c.get('printers') or {}).items():
            preset = raw.get('preset', tag)
            base = printer_preset(preset) if preset in PRINTER_PROFILES else ChannelParams()
            overrides = {k: v for k, v in raw.items() if k != 'preset'}
            printers[tag] = ChannelParams.from_dict({**base.as_dict(), **overrides})
        channel = ChannelSpec(
            printers=printers or printer_presets(),
            scan_pps=c.get('scan_pps', 8),
            auth_pps=c.get('auth_pps', 3),
        )
        for tag, params in channel.printers.items():
            if params.pps != channel.scan_pps:
                raise ParameterError(f'printer {tag} prints at pps {params.pps}, scans expect {channel.scan_pps}')

        a = dict(data.get('attack', {}))
        train = TrainConfig.from_dict(a.pop('train', {}))
        attack = AttackSpec(train=train, **{k: (_tuple(v) if isinstance(v, list) else v) for k, v in a.items()})

        auth = PreprocessParams(**data.get('auth', {}))
        cl = data.get('classify', {})
        classify = ClassifySpec(**{k: (_tuple(v) if isinstance(v, list) else v) for k, v in cl.items()})
        r = data.get('report', {})
        report = ReportSpec(**{k: (_tuple(v) if isinstance(v, list) else v) for k, v in r.items()})
    except TypeError as e:
        raise ParameterError(f'invalid experiment config: {e}')

    return ExperimentConfig(
        name=data.get('name', 'experiment'), templates=templates, channel=channel,
        attack=attack, auth=auth, classify=classify, report=report,
        output_dir=data.get('output_dir', 'out'), source=source,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ParameterError(f'Experiment config not found: {path}')
    except json.JSONDecodeError as e:
        raise ParameterError(f'Invalid JSON in experiment config {path}: {e}')
    return config_from_dict(data, source=str(path))

"""
Digital templates and dataset manifests.

Bit convention everywhere in the workbench: 0 = black ink, 1 = white
substrate. Density is the probability of a black pixel, P[t = 0].
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

# Print resolution of the 1x1-symbol codes, in dots per inch.
PRINT_DPI = 812.8

ROLE_ATTACK_TRAIN = 'attack-train'
ROLE_AUTH_TEST = 'auth-test'
ROLES = (ROLE_ATTACK_TRAIN, ROLE_AUTH_TEST)

# Nominal scanner settings used for the two acquisition resolutions.
_NOMINAL_PPI = {8: 6400, 3: 2400}


def ppi_to_pps(ppi: int) -> int:
    """Scanner ppi to pixels per printed symbol (6400 -> 8, 2400 -> 3)."""
    return max(1, int(round(ppi / PRINT_DPI)))


def pps_to_ppi(pps: int) -> int:
    return _NOMINAL_PPI.get(pps, int(round(pps * PRINT_DPI)))


@dataclass(frozen=True, eq=False)
class BinaryTemplate:
    """The defender's digital template t, an n x m bit matrix"""
    bits: np.ndarray
    density: float
    id: int = 0
    seed: int = 0

    def __post_init__(self):
        bits = np.array(self.bits, dtype=np.uint8)
        bits.setflags(write=False)
        object.__setattr__(self, 'bits', bits)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.bits.shape

    def equals(self, other: 'BinaryTemplate') -> bool:
        return self.shape == other.shape and bool(np.array_equal(self.bits, other.bits))

    def with_bits(self, bits: np.ndarray) -> 'BinaryTemplate':
        return replace(self, bits=bits)


@dataclass(frozen=True)
class ScanRef:
    printer_tag: str
    ppi: int
    path: Path

    @property
    def pps(self) -> int:
        return ppi_to_pps(self.ppi)


@dataclass(frozen=True)
class ManifestEntry:
    id: int
    density: float
    template_path: Path
    role: str
    scans: Tuple[ScanRef, ...] = ()

    def scan(self, printer_tag: str, ppi: int) -> Optional[ScanRef]:
        for ref in self.scans:
            if ref.printer_tag == printer_tag and ref.ppi == ppi:
                return ref
        return None


@dataclass(frozen=True)
class DatasetManifest:
    """Templates, their scans per printer and resolution, and their roles"""
    entries: Tuple[ManifestEntry, ...]
    root: Path = field(default_factory=Path)

    def by_role(self, role: str, density: Optional[float] = None) -> List[ManifestEntry]:
        return [
            e for e in self.entries
            if e.role == role and (density is None or np.isclose(e.density, density))
        ]

    @property
    def densities(self) -> List[float]:
        return sorted({e.density for e in self.entries})

    def scan_path(self, entry: ManifestEntry, printer_tag: str, ppi: int) -> Optional[Path]:
        ref = entry.scan(printer_tag, ppi)
        return None if ref is None else self.root / ref.path

    def template_path(self, entry: ManifestEntry) -> Path:
        return self.root / entry.template_path

    def with_scans(self, scans: Dict[int, ScanRef]) -> 'DatasetManifest':
        """Add or replace one scan per entry id, keeping scans sorted."""
        entries = []
        for e in self.entries:
            ref = scans.get(e.id)
            if ref is None:
                entries.append(e)
                continue
            kept = [s for s in e.scans if (s.printer_tag, s.ppi) != (ref.printer_tag, ref.ppi)]
            kept.append(ref)
            kept.sort(key=lambda s: (s.printer_tag, s.ppi))
            entries.append(replace(e, scans=tuple(kept)))
        return replace(self, entries=tuple(entries))

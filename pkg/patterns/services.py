"""
Template generation and on-disk formats for templates and manifests.
"""
import json
import logging
from pathlib import Path

import numpy as np
from PIL import Image, PngImagePlugin

from cdpbench.exceptions import FormatError, ManifestError, ParameterError
from .models import (
    ROLES, BinaryTemplate, DatasetManifest, ManifestEntry, ScanRef,
)

logger = logging.getLogger(__name__)

MIN_SIDE = 16


def template_rng(seed):
    """Counter-based generator so templates replay bit-exactly on any platform."""
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


def generate_template(n, m, density, seed, template_id=0):
    """
    Draw each pixel black (0) independently with probability `density`.
    Same (n, m, density, seed) always yields the same bits.
    """
    if not 0.0 < density < 1.0:
        raise ParameterError(f'density must lie in (0, 1), got {density}')
    if n < MIN_SIDE or m < MIN_SIDE:
        raise ParameterError(f'template sides must be >= {MIN_SIDE}, got {n}x{m}')
    uniform = template_rng(seed).random((n, m))
    bits = (uniform >= density).astype(np.uint8)
    return BinaryTemplate(bits=bits, density=float(density), id=int(template_id), seed=int(seed))


def measure_density(t):
    """Realized black fraction |{bits = 0}| / (n m)."""
    bits = t.bits if isinstance(t, BinaryTemplate) else np.asarray(t)
    return float(np.count_nonzero(bits == 0)) / bits.size


def save_template(t, path):
    """Write a 1-bit PNG (black = 0, white = 1) with the metadata as text chunks."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    info = PngImagePlugin.PngInfo()
    info.add_text('density', repr(float(t.density)))
    info.add_text('id', str(int(t.id)))
    info.add_text('seed', str(int(t.seed)))
    image = Image.fromarray(t.bits.astype(bool))
    image.save(path, format='PNG', pnginfo=info)
    return path


def _bits_from_pixels(pixels, white, path):
    values = np.unique(pixels)
    if not np.all(np.isin(values, (0, white))):
        raise FormatError(f'{path}: template pixels must be 0 or {white}, found {values[:5].tolist()}')
    return (pixels == white).astype(np.uint8)


def load_template(path, template_id=None, density=None):
    """Read a 1-bit, 8-bit or 16-bit grayscale template PNG."""
    path = Path(path)
    try:
        with Image.open(path) as image:
            image.load()
            mode = image.mode
            text = dict(getattr(image, 'text', {}) or {})
            pixels = np.array(image)
    except FileNotFoundError:
        raise FormatError(f'Template file not found: {path}')
    except OSError as e:
        raise FormatError(f'Cannot read template {path}: {e}')

    if mode == '1':
        bits = pixels.astype(np.uint8)
    elif mode == 'L':
        bits = _bits_from_pixels(pixels, 255, path)
    elif mode in ('I;16', 'I;16B', 'I'):
        bits = _bits_from_pixels(pixels, 65535, path)
    else:
        raise FormatError(f'{path}: unsupported image mode {mode}, expected grayscale')

    if template_id is None:
        template_id = int(text.get('id', 0))
    seed = int(text.get('seed', 0))
    if density is None:
        density = float(text['density']) if 'density' in text else measure_density(bits)
    return BinaryTemplate(bits=bits, density=float(density), id=int(template_id), seed=seed)


# Manifest

def _entry_to_dict(entry):
    return {
        'id': entry.id,
        'density': entry.density,
        'template_path': entry.template_path.as_posix(),
        'role': entry.role,
        'scans': [
            {'printer_tag': s.printer_tag, 'ppi': s.ppi, 'path': s.path.as_posix()}
            for s in entry.scans
        ],
    }


def save_manifest(manifest, path):
    """Write the manifest as JSON; paths are stored relative to its directory."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        'format': 'cdpbench-manifest',
        'version': 1,
        'entries': [_entry_to_dict(e) for e in manifest.entries],
    }
    tmp = path.with_suffix(path.suffix + '.tmp')
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + '\n', encoding='utf-8')
    tmp.replace(path)
    return path


def load_manifest(path, check_files=True):
    """
    Parse and validate a dataset manifest.

    Every referenced file must exist and no template may appear under both
    roles.
    """
    path = Path(path)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            payload = json.load(f)
    except FileNotFoundError:
        raise ManifestError(f'Manifest not found: {path}')
    except json.JSONDecodeError as e:
        raise ManifestError(f'Invalid JSON in manifest {path}: {e}')

    root = path.parent
    entries = []
    roles_by_template = {}
    seen_ids = set()
    for i, raw in enumerate(payload.get('entries', []), start=1):
        try:
            entry = ManifestEntry(
                id=int(raw['id']),
                density=float(raw['density']),
                template_path=Path(raw['template_path']),
                role=str(raw['role']),
                scans=tuple(
                    ScanRef(printer_tag=str(s['printer_tag']), ppi=int(s['ppi']), path=Path(s['path']))
                    for s in raw.get('scans', [])
                ),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ManifestError(f'{path}: entry {i} is malformed ({e})')

        if entry.role not in ROLES:
            raise ManifestError(f'{path}: entry {entry.id} has unknown role {entry.role!r}')
        if entry.id in seen_ids:
            raise ManifestError(f'{path}: duplicate entry id {entry.id}')
        seen_ids.add(entry.id)

        key = entry.template_path.as_posix()
        previous = roles_by_template.setdefault(key, entry.role)
        if previous != entry.role:
            raise ManifestError(f'{path}: template {key} appears in both {previous} and {entry.role}')

        if check_files:
            missing = [p for p in [entry.template_path, *(s.path for s in entry.scans)]
                       if not (root / p).exists()]
            if missing:
                raise ManifestError(f'{path}: entry {entry.id} references missing files: '
                                    + ', '.join(p.as_posix() for p in missing))
        entries.append(entry)

    if not entries:
        raise ManifestError(f'{path}: manifest has no entries')
    logger.debug('Loaded manifest %s with %d entries', path, len(entries))
    return DatasetManifest(entries=tuple(entries), root=root)

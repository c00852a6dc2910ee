"""
Print-scan channel simulator, resampling and scan registration.
"""
import logging
from pathlib import Path

import numpy as np
from PIL import Image, PngImagePlugin
from scipy import ndimage

from cdpbench.exceptions import DimensionError, FormatError, ParameterError
from patterns.services import template_rng
from .models import GrayImage, Registration

logger = logging.getLogger(__name__)


def upsample(t, pps, provenance='template'):
    """Nearest-neighbour replication of every bit into a pps x pps block."""
    if pps < 1:
        raise ParameterError(f'pps must be >= 1, got {pps}')
    block = np.ones((pps, pps), dtype=np.float64)
    pixels = np.kron(t.bits.astype(np.float64), block)
    return GrayImage(pixels=pixels, pps=int(pps), provenance=provenance)


def _disk(radius):
    r = int(radius)
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return (yy * yy + xx * xx) <= r * r


def spread_ink(pixels, radius):
    """
    Grow (radius > 0) or shrink (radius < 0) the dark regions by a possibly
    fractional radius in pixels. A fractional radius blends the two
    neighbouring integer disks so the response is continuous in dot gain.
    """
    if radius == 0:
        return pixels
    op = ndimage.grey_erosion if radius > 0 else ndimage.grey_dilation
    r = abs(radius)
    lower = int(np.floor(r))
    frac = r - lower

    def apply(k):
        if k == 0:
            return pixels
        return op(pixels, footprint=_disk(k), mode='nearest')

    out = apply(lower)
    if frac > 0:
        out = (1.0 - frac) * out + frac * apply(lower + 1)
    return out


def _replicate(values, pps):
    return np.repeat(np.repeat(values, pps, axis=0), pps, axis=1)


def place_dots(bits, pps, offsets):
    """
    Intensities of a print where every black symbol leaves one pps x pps dot
    displaced by its own (dy, dx) pixel offset. Offsets are clipped below one
    symbol, so a dot lands inside the 3x3 neighbourhood of its symbol;
    overlapping dots stay black.
    """
    n, m = bits.shape
    offsets = np.clip(np.asarray(offsets, dtype=np.int64), -(pps - 1), pps - 1)
    black = np.pad(bits == 0, 1)
    padded = np.pad(offsets, ((1, 1), (1, 1), (0, 0)))
    local_y = np.tile(np.arange(pps), n)[:, None]
    local_x = np.tile(np.arange(pps), m)[None, :]

    ink = np.zeros((n * pps, m * pps), dtype=bool)
    for a in (-1, 0, 1):
        for b in (-1, 0, 1):
            rows, cols = slice(1 + a, 1 + a + n), slice(1 + b, 1 + b + m)
            ry = local_y - a * pps - _replicate(padded[rows, cols, 0], pps)
            rx = local_x - b * pps - _replicate(padded[rows, cols, 1], pps)
            inside = (ry >= 0) & (ry < pps) & (rx >= 0) & (rx < pps)
            ink |= _replicate(black[rows, cols], pps) & inside
    return np.where(ink, 0.0, 1.0)


def simulate_print_scan(t, params, provenance='original', printer_tag=''):
    """
    dot placement -> signed dot gain -> Gaussian PSF -> tone map -> sensor noise -> clamp.
    Deterministic given (t, params). Without jitter the placement step is
    upsample(t, pps).
    """
    pps = params.pps
    rng = template_rng(params.seed)
    if params.jitter > 0:
        offsets = np.rint(params.jitter * pps * rng.standard_normal(t.shape + (2,)))
        pixels = place_dots(t.bits, pps, offsets)
    else:
        pixels = upsample(t, pps).pixels
    pixels = spread_ink(pixels, params.dot_gain * pps)
    pixels = ndimage.gaussian_filter(pixels, sigma=params.psf_sigma * pps, mode='nearest')
    pixels = params.gain * pixels + params.offset
    if params.noise_std > 0:
        noise = rng.standard_normal(pixels.shape)
        pixels = pixels + params.noise_std * noise
    pixels = np.clip(pixels, 0.0, 1.0)
    return GrayImage(pixels=pixels, pps=pps, provenance=provenance, printer_tag=printer_tag)


def _area_weights(n_symbols, pps, target_pps):
    """Row-stochastic overlap matrix mapping n*pps samples onto n*target_pps bins."""
    n_in = n_symbols * pps
    n_out = n_symbols * target_pps
    factor = pps / target_pps
    weights = np.zeros((n_out, n_in))
    for j in range(n_out):
        lo, hi = j * factor, (j + 1) * factor
        for i in range(int(np.floor(lo)), min(n_in, int(np.ceil(hi)))):
            overlap = min(i + 1, hi) - max(i, lo)
            if overlap > 0:
                weights[j, i] = overlap / factor
    return weights


def downscale(img, target_pps):
    """Area-average an image to a lower number of pixels per symbol."""
    if target_pps < 1:
        raise ParameterError(f'target_pps must be >= 1, got {target_pps}')
    if target_pps > img.pps:
        raise ParameterError(f'cannot upsample from {img.pps} to {target_pps} pixels per symbol')
    if target_pps == img.pps:
        return img
    h, w = img.shape
    if h % img.pps or w % img.pps:
        raise DimensionError(f'image {h}x{w} is not a whole number of {img.pps}-pixel symbols')
    rows = _area_weights(h // img.pps, img.pps, target_pps)
    cols = _area_weights(w // img.pps, img.pps, target_pps)
    pixels = rows @ img.pixels @ cols.T
    return img.with_pixels(np.clip(pixels, 0.0, 1.0), pps=int(target_pps))


def block_means(img):
    """One value per printed symbol: the mean of its pps x pps patch."""
    h, w = img.shape
    pps = img.pps
    if h % pps or w % pps:
        raise DimensionError(f'image {h}x{w} is not registered to {pps}-pixel symbols')
    return img.pixels.reshape(h // pps, pps, w // pps, pps).mean(axis=(1, 3))


def translate(img, dy, dx, margin, fill=1.0):
    """Embed `img` in a blank canvas with `margin` pixels on each side, displaced by (dy, dx)."""
    if abs(dy) > margin or abs(dx) > margin:
        raise ParameterError(f'shift ({dy}, {dx}) exceeds margin {margin}')
    h, w = img.shape
    canvas = np.full((h + 2 * margin, w + 2 * margin), float(fill))
    canvas[margin + dy:margin + dy + h, margin + dx:margin + dx + w] = img.pixels
    return img.with_pixels(canvas)


def _zero_mean_corr(a, b_centered, b_norm):
    a = a - a.mean()
    a_norm = np.sqrt(np.sum(a * a))
    if a_norm == 0 or b_norm == 0:
        return 0.0
    return float(np.sum(a * b_centered) / (a_norm * b_norm))


def _candidate_shifts(max_shift):
    shifts = [(dy, dx) for dy in range(-max_shift, max_shift + 1)
              for dx in range(-max_shift, max_shift + 1)]
    return sorted(shifts, key=lambda s: (abs(s[0]) + abs(s[1]), abs(s[0]), s[0], s[1]))


def _scan_window(scan, reference_shape, max_shift):
    h, w = reference_shape
    ph, pw = scan.shape
    if ph < h or pw < w:
        raise DimensionError(f'scan {ph}x{pw} is smaller than the template image {h}x{w}')
    if max_shift < 0:
        raise ParameterError(f'max_shift must be >= 0, got {max_shift}')
    padded = np.pad(scan.pixels, max_shift, mode='edge')
    return padded, (ph - h) // 2 + max_shift, (pw - w) // 2 + max_shift


def find_shift(scan, t, max_shift):
    """
    Exhaustive integer-shift search maximizing zero-mean cross-correlation
    against upsample(t, scan.pps). Ties go to the smallest displacement.
    """
    reference = upsample(t, scan.pps).pixels
    h, w = reference.shape
    centered = reference - reference.mean()
    ref_norm = np.sqrt(np.sum(centered * centered))
    padded, oy, ox = _scan_window(scan, reference.shape, max_shift)

    best_offset, best_score = (0, 0), -np.inf
    for dy, dx in _candidate_shifts(max_shift):
        crop = padded[oy + dy:oy + dy + h, ox + dx:ox + dx + w]
        score = _zero_mean_corr(crop, centered, ref_norm)
        if score > best_score:
            best_offset, best_score = (dy, dx), score
    return Registration(shift=(-best_offset[0], -best_offset[1]), score=best_score)


def register(scan, t, max_shift):
    """Crop of `scan` aligned to the template at the best integer shift."""
    registration = find_shift(scan, t, max_shift)
    n, m = t.shape
    h, w = n * scan.pps, m * scan.pps
    padded, oy, ox = _scan_window(scan, (h, w), max_shift)
    dy, dx = -registration.shift[0], -registration.shift[1]
    logger.debug('Registered scan with correction %s (corr=%.4f)', registration.shift, registration.score)
    return scan.with_pixels(padded[oy + dy:oy + dy + h, ox + dx:ox + dx + w])


# 16-bit PNG storage

def save_gray(img, path):
    """Store intensities as 16-bit grayscale, v -> round(v * 65535)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    info = PngImagePlugin.PngInfo()
    info.add_text('pps', str(img.pps))
    info.add_text('provenance', img.provenance)
    info.add_text('printer_tag', img.printer_tag)
    values = np.rint(np.clip(img.pixels, 0.0, 1.0) * 65535).astype(np.uint16)
    Image.fromarray(values).save(path, format='PNG', pnginfo=info)
    return path


def load_gray(path, pps=None):
    path = Path(path)
    try:
        with Image.open(path) as image:
            image.load()
            mode = image.mode
            text = dict(getattr(image, 'text', {}) or {})
            values = np.array(image)
    except FileNotFoundError:
        raise FormatError(f'Scan file not found: {path}')
    except OSError as e:
        raise FormatError(f'Cannot read scan {path}: {e}')

    if mode in ('I;16', 'I;16B', 'I'):
        pixels = values.astype(np.float64) / 65535.0
    elif mode == 'L':
        pixels = values.astype(np.float64) / 255.0
    else:
        raise FormatError(f'{path}: unsupported image mode {mode}, expected grayscale')

    if pps is None:
        if 'pps' not in text:
            raise FormatError(f'{path}: pixels-per-symbol unknown; pass pps explicitly')
        pps = int(text['pps'])
    return GrayImage(
        pixels=np.clip(pixels, 0.0, 1.0),
        pps=int(pps),
        provenance=text.get('provenance', 'original'),
        printer_tag=text.get('printer_tag', ''),
    )

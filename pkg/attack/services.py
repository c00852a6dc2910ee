"""
Public operations of the template-estimation attack.
"""
import csv
import json
import logging
from pathlib import Path

import numpy as np

from cdpbench.exceptions import DimensionError, FormatError, ParameterError
from patterns.models import BinaryTemplate
from patterns.services import measure_density
from printchan.services import block_means
from .lda import lda_estimate, lda_train
from .models import (
    KIND_LDA, KIND_LEARNED, KIND_OTSU, EstimatorModel, SoftEstimate, TrainConfig,
)
from .otsu import otsu_estimate, otsu_threshold, threshold_symbols
from .training import learned_estimate, train_estimator

logger = logging.getLogger(__name__)

__all__ = [
    'otsu_threshold', 'otsu_estimate', 'otsu_model', 'lda_train', 'train_estimator',
    'estimate', 'binarize_estimate', 'p_error', 'save_model', 'load_model',
    'write_loss_history',
]


def otsu_model(pps):
    return EstimatorModel(kind=KIND_OTSU, pps=pps)


def estimate(model, scan, template_id=0, seed=0):
    """Soft estimate of the template behind a registered scan."""
    if scan.pps != model.pps:
        raise DimensionError(f'scan has pps {scan.pps}, model expects {model.pps}')
    h, w = scan.shape
    if h % scan.pps or w % scan.pps:
        raise DimensionError(f'scan {h}x{w} is not registered to {scan.pps}-pixel symbols')

    if model.kind == KIND_OTSU:
        values = threshold_symbols(block_means(scan)).astype(np.float64)
    elif model.kind == KIND_LDA:
        values = lda_estimate(model, scan)
    else:
        values = learned_estimate(model, scan, seed=seed)
    return SoftEstimate(values=values, template_id=template_id)


def binarize_estimate(e, tau=0.5):
    """Values below tau become black (0); a value equal to tau stays white."""
    if not 0.0 < tau < 1.0:
        raise ParameterError(f'tau must lie in (0, 1), got {tau}')
    bits = (e.values >= tau).astype(np.uint8)
    return BinaryTemplate(bits=bits, density=measure_density(bits), id=e.template_id)


def p_error(t_hat, t):
    """Percentage of differing symbols, 100 * Hamming / (n m)."""
    if t_hat.shape != t.shape:
        raise DimensionError(f'template shapes differ: {t_hat.shape} vs {t.shape}')
    return 100.0 * float(np.count_nonzero(t_hat.bits != t.bits)) / t.bits.size


# Checkpoints

def save_model(model, path):
    """Self-describing .npz: metadata JSON plus one array per parameter tensor."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        'kind': model.kind,
        'pps': model.pps,
        'mode': model.mode,
        'input_noise_std': model.input_noise_std,
        'window': model.window,
        'bias': model.bias,
        'config': model.config.as_dict() if model.config else None,
    }
    arrays = {}
    if model.kind == KIND_LDA:
        arrays['weights'] = np.asarray(model.weights)
    elif model.kind == KIND_LEARNED:
        state = model.network.state_dict()
        meta['shapes'] = {k: list(v.shape) for k, v in state.items()}
        for name, tensor in state.items():
            arrays[f'param:{name}'] = tensor.detach().cpu().numpy()
    arrays['meta'] = np.array(json.dumps(meta, sort_keys=True))
    with open(path, 'wb') as f:
        np.savez(f, **arrays)
    return path


def load_model(path):
    path = Path(path)
    try:
        data = np.load(path, allow_pickle=False)
    except FileNotFoundError:
        raise FormatError(f'Model checkpoint not found: {path}')
    except (OSError, ValueError) as e:
        raise FormatError(f'Cannot read model checkpoint {path}: {e}')

    with data:
        meta = json.loads(str(data['meta']))
        config = TrainConfig.from_dict(meta['config']) if meta.get('config') else None
        model = EstimatorModel(
            kind=meta['kind'], pps=int(meta['pps']), mode=meta['mode'],
            input_noise_std=float(meta['input_noise_std']), window=int(meta['window']),
            bias=float(meta['bias']), config=config,
        )
        if model.kind == KIND_LDA:
            model.weights = np.array(data['weights'])
        elif model.kind == KIND_LEARNED:
            import torch
            from .networks import TemplateEstimator

            network = TemplateEstimator(pps=model.pps, base_channels=config.base_channels)
            state = {
                key[len('param:'):]: torch.from_numpy(np.array(data[key]))
                for key in data.files if key.startswith('param:')
            }
            network.load_state_dict(state)
            network.eval()
            model.network = network
    return model


def write_loss_history(history, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['epoch', 'total', 'recon', 'marginal'])
        for row in history:
            writer.writerow([row.epoch, repr(row.total), repr(row.recon), repr(row.marginal)])
    return path

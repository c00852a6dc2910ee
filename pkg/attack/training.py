"""
Training of the learned estimator by minimizing -(D_tt^ - D_t).

D_tt^ is the Gaussian-prior log-likelihood, -lam * E||t - g(x)||^2 up to
constants. D_t is estimated by a critic trained to tell template patches
from estimated ones; its logit approximates the log density ratio, so
E[-logit(g(x))] estimates the divergence of the estimate marginal from the
template prior.
"""
import logging

import numpy as np
import torch
import torch.nn.functional as F
from django.conf import settings

from cdpbench.exceptions import DimensionError, ParameterError, TrainingError
from patterns.services import template_rng
from .models import (
    KIND_LEARNED, MODE_DETERMINISTIC, MODE_STOCHASTIC, MODES, STOCHASTIC_NOISE_STD,
    EstimatorModel, LossBreakdown,
)
from .networks import TemplateCritic, TemplateEstimator

logger = logging.getLogger(__name__)

MIN_PAIRS = 8


def configure_threads():
    torch.set_num_threads(max(1, int(getattr(settings, 'CDP_TORCH_THREADS', 1))))


def critic_patches(images, oy, ox, patch):
    return images[..., oy:oy + patch, ox:ox + patch]


def estimation_loss(mapper, critic, scans, templates, lam, adversarial_weight, patch_origin=None, patch=None):
    """
    Returns (total, recon, marginal, estimate) as tensors with
    total = recon + marginal = -(D_tt^ - D_t).
    """
    estimate = mapper(scans)
    recon = lam * torch.mean((templates - estimate) ** 2)
    if critic is not None and adversarial_weight > 0:
        oy, ox = patch_origin or (0, 0)
        size = patch or estimate.shape[-1]
        logits = critic(critic_patches(estimate, oy, ox, size))
        marginal = adversarial_weight * torch.mean(-logits)
    else:
        marginal = torch.zeros((), dtype=recon.dtype)
    return recon + marginal, recon, marginal, estimate


def _stack_pairs(pairs, pps):
    if len(pairs) < MIN_PAIRS:
        raise ParameterError(f'learned estimator needs >= {MIN_PAIRS} training pairs, got {len(pairs)}')
    shape = pairs[0][0].shape
    for t, scan in pairs:
        if scan.pps != pps:
            raise DimensionError(f'scan pps {scan.pps} does not match training pps {pps}')
        if t.shape != shape or not scan.is_registered_to(t.shape):
            raise DimensionError('training pairs must be registered templates of one size')
    scans = np.stack([scan.pixels for _, scan in pairs])[:, None].astype(np.float32)
    templates = np.stack([t.bits for t, _ in pairs])[:, None].astype(np.float32)
    return torch.from_numpy(scans), torch.from_numpy(templates)


def _crop_batch(scans, templates, idx, rng, crop, pps):
    """One independent random crop per selected pair."""
    _, _, n, m = templates.shape
    xs, ts = [], []
    for i in idx:
        oy = int(rng.integers(0, n - crop + 1))
        ox = int(rng.integers(0, m - crop + 1))
        xs.append(scans[i, :, oy * pps:(oy + crop) * pps, ox * pps:(ox + crop) * pps])
        ts.append(templates[i, :, oy:oy + crop, ox:ox + crop])
    return torch.stack(xs), torch.stack(ts)


def train_estimator(pairs, cfg, mode=MODE_DETERMINISTIC):
    """
    Train g_phi on (template, scan) pairs and return the model together with
    one LossBreakdown per epoch.
    """
    if mode not in MODES:
        raise ParameterError(f'unknown estimator mode {mode!r}')
    configure_threads()
    torch.manual_seed(cfg.seed)
    rng = template_rng(cfg.seed)
    noise_gen = torch.Generator().manual_seed(cfg.seed)
    noise_std = STOCHASTIC_NOISE_STD if mode == MODE_STOCHASTIC else 0.0

    scans, templates = _stack_pairs(pairs, cfg.pps)
    count, _, n, m = templates.shape
    crop = min(cfg.crop, n, m)
    patch = min(cfg.critic_patch, crop) // 8 * 8
    batch = min(cfg.batch_size, count)
    pps = cfg.pps

    mapper = TemplateEstimator(pps=pps, base_channels=cfg.base_channels)
    critic = TemplateCritic(patch=patch) if cfg.adversarial_weight > 0 else None
    optimizer = torch.optim.Adam(mapper.parameters(), lr=cfg.learning_rate)
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=cfg.epochs)
    critic_optimizer = torch.optim.Adam(critic.parameters(), lr=cfg.learning_rate) if critic else None

    history = []
    for epoch in range(1, cfg.epochs + 1):
        weight = cfg.adversarial_weight_at(epoch)
        sums = np.zeros(3)
        for _ in range(cfg.steps_per_epoch):
            idx = rng.choice(count, size=batch, replace=False)
            x, t = _crop_batch(scans, templates, idx, rng, crop, pps)
            if noise_std > 0:
                x = x + noise_std * torch.randn(x.shape, generator=noise_gen)
            py = int(rng.integers(0, crop - patch + 1))
            px = int(rng.integers(0, crop - patch + 1))

            if critic is not None:
                with torch.no_grad():
                    fake = mapper(x)
                real_logits = critic(critic_patches(t, py, px, patch))
                fake_logits = critic(critic_patches(fake, py, px, patch))
                critic_loss = (
                    F.binary_cross_entropy_with_logits(real_logits, torch.ones_like(real_logits))
                    + F.binary_cross_entropy_with_logits(fake_logits, torch.zeros_like(fake_logits))
                )
                critic_optimizer.zero_grad()
                critic_loss.backward()
                critic_optimizer.step()

            total, recon, marginal, _ = estimation_loss(
                mapper, critic, x, t, cfg.lam, weight, (py, px), patch,
            )
            if not torch.isfinite(total):
                raise TrainingError(f'training diverged at epoch {epoch} (loss is not finite)', epoch=epoch)
            optimizer.zero_grad()
            total.backward()
            optimizer.step()
            sums += (total.item(), recon.item(), marginal.item())
        scheduler.step()

        total_mean, recon_mean, marginal_mean = sums / cfg.steps_per_epoch
        history.append(LossBreakdown(epoch, float(total_mean), float(recon_mean), float(marginal_mean)))
        logger.debug('epoch %d: total=%.5f recon=%.5f marginal=%.5f (critic weight %.4g)',
                     epoch, total_mean, recon_mean, marginal_mean, weight)

    mapper.eval()
    model = EstimatorModel(
        kind=KIND_LEARNED, pps=pps, mode=mode, input_noise_std=noise_std,
        network=mapper, config=cfg,
    )
    return model, history


def learned_estimate(model, scan, seed=0):
    """Whiteness per symbol from the trained mapper; noisy input in stochastic mode."""
    configure_threads()
    x = torch.from_numpy(scan.pixels.astype(np.float32))[None, None]
    if model.input_noise_std > 0:
        gen = torch.Generator().manual_seed(int(seed) & 0x7FFFFFFFFFFFFFFF)
        x = x + model.input_noise_std * torch.randn(x.shape, generator=gen)
    with torch.no_grad():
        values = model.network(x)[0, 0].double().numpy()
    return np.clip(values, 0.0, 1.0)

"""Supervised training of the day-time encoder/decoder on dense synthetic ground truth."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F

from .depthnet import (
    MAX_DEPTH,
    MIN_DEPTH,
    ArchDescriptor,
    Decoder,
    Encoder,
    checkpoint_from_module,
    init_module,
    to_batch,
)
from .errors import AdaptationError, ConfigError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 30
    learning_rate: float = 1e-3
    batch_size: int = 16
    seed: int = 0
    arch: ArchDescriptor = field(default_factory=ArchDescriptor)
    min_depth: float = MIN_DEPTH
    max_depth: float = MAX_DEPTH
    hflip: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if isinstance(self.arch, dict):
            object.__setattr__(self, "arch", ArchDescriptor.from_dict(self.arch))

    @classmethod
    def from_dict(cls, d: dict) -> "PretrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown PretrainConfig keys: {sorted(unknown)}")
        return cls(**d)


def normalized_inverse_depth_loss(
    disps: list[torch.Tensor], gt: torch.Tensor, min_depth: float, max_depth: float
) -> torch.Tensor:
    """L1 between mean-normalized predicted and true inverse depth, averaged over scales.

    Predictions at coarser scales are upsampled to the ground-truth size.
    Pixels with ``gt == 0`` are ignored.
    """
    lo, hi = 1.0 / max_depth, 1.0 / min_depth
    valid = gt > 0
    inv_gt = torch.where(valid, 1.0 / gt.clamp(min=1e-6), torch.zeros_like(gt))
    count = valid.sum(dim=(2, 3), keepdim=True).clamp(min=1)
    inv_gt = inv_gt / (inv_gt.sum(dim=(2, 3), keepdim=True) / count)
    losses = []
    for disp in disps:
        if disp.shape[-2:] != gt.shape[-2:]:
            disp = F.interpolate(disp, size=gt.shape[-2:], mode="bilinear", align_corners=False)
        inv = lo + (hi - lo) * disp
        inv = inv / ((inv * valid).sum(dim=(2, 3), keepdim=True) / count)
        losses.append(((inv - inv_gt).abs() * valid).sum() / valid.sum().clamp(min=1))
    return torch.stack(losses).mean()


def pretrain_day(
    images: np.ndarray,
    depths: np.ndarray,
    cfg: PretrainConfig = PretrainConfig(),
    on_epoch: Callable[[int, float], None] | None = None,
):
    """Fit encoder and decoder on ``(N, H, W, 3)`` images and ``(N, H, W)`` depths.

    Returns ``(encoder, decoder)`` checkpoints tagged ``day``. ``on_epoch`` is
    called with ``(epoch, mean training loss)`` after every epoch.
    """
    images = np.asarray(images, dtype=np.float32)
    depths = np.asarray(depths, dtype=np.float32)
    if len(images) == 0 or images.shape[:3] != depths.shape:
        raise ConfigError(f"images {images.shape} and depths {depths.shape} do not pair up")

    encoder = init_module(Encoder(cfg.arch), cfg.seed)
    decoder = init_module(Decoder(cfg.arch), cfg.seed + 1)
    params = list(encoder.parameters()) + list(decoder.parameters())
    optimizer = torch.optim.Adam(params, lr=cfg.learning_rate)

    n = len(images)
    bs = min(cfg.batch_size, n)
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng([cfg.seed, epoch])
        perm = rng.permutation(n)
        flips = rng.random(n) < 0.5 if cfg.hflip else np.zeros(n, dtype=bool)
        total, batches = 0.0, 0
        for start in range(0, n - bs + 1, bs):
            idx = perm[start : start + bs]
            img, dep = images[idx].copy(), depths[idx].copy()
            f = flips[start : start + bs]
            img[f] = img[f][:, :, ::-1]
            dep[f] = dep[f][:, :, ::-1]
            x = to_batch(img)
            gt = torch.from_numpy(np.ascontiguousarray(dep))[:, None]
            loss = normalized_inverse_depth_loss(decoder(encoder(x)), gt, cfg.min_depth, cfg.max_depth)
            if not torch.isfinite(loss):
                raise AdaptationError(f"pre-training diverged in epoch {epoch}", step=epoch)
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            total += float(loss.detach())
            batches += 1
        mean_loss = total / batches
        logger.info("pretrain epoch %d/%d loss %.4f", epoch + 1, cfg.epochs, mean_loss)
        if on_epoch is not None:
            on_epoch(epoch, mean_loss)

    return (
        checkpoint_from_module(encoder, "encoder", "day"),
        checkpoint_from_module(decoder, "decoder", "day"),
    )

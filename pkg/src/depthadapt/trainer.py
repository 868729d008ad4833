"""Encoder adaptation to a new domain through image transfer.

A trainable copy of the source encoder learns to map target-domain images into
the source feature space. The source encoder and the shared decoder stay
frozen. Each step draws unpaired source and target batches, creates the
cross-domain fakes with the transfer providers, and minimizes

    total = alpha * feature_consistency + beta * depth_consistency + gamma * smoothness
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import yaml

from .depthnet import Checkpoint, Encoder, check_pair, checkpoint_from_module, to_batch
from .errors import AdaptationError, ConfigError
from .losses import depth_consistency, feature_consistency, smoothness
from .transfer import TransferProvider, transfer

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 0.01
    gamma: float = 0.01

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ConfigError("loss weights must be >= 0")


# Loss-term subsets compared in the ablation study.
ABLATIONS = {
    "FC": (True, False, False),
    "OC+OS": (False, True, True),
    "FC+OC": (True, True, False),
    "FC+OC+OS": (True, True, True),
}


def ablation_weights(name: str, base: LossWeights = LossWeights()) -> LossWeights:
    """Zero the weights of the terms left out by ablation row ``name``."""
    try:
        fc, oc, os_ = ABLATIONS[name]
    except KeyError:
        raise ConfigError(f"unknown ablation {name!r}; choose from {list(ABLATIONS)}") from None
    return LossWeights(base.alpha if fc else 0.0, base.beta if oc else 0.0, base.gamma if os_ else 0.0)


@dataclass(frozen=True)
class AdaptConfig:
    epochs: int = 30
    batch_size: int = 1
    learning_rate: float = 2e-4
    betas: tuple[float, float] = (0.9, 0.999)
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    fc_scales: tuple[int, ...] | None = None  # None: every pyramid level
    oc_scales: tuple[int, ...] = (0,)
    smooth_scales: tuple[int, ...] = (0,)
    reduction: str = "mean"
    paper_exact_smoothness: bool = False
    symmetric_smoothness: bool = False
    grad_clip: float | None = None  # max global gradient norm; None leaves Adam unclipped

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ConfigError("grad_clip must be > 0 or None")
        if self.reduction not in ("mean", "sum"):
            raise ConfigError("reduction must be 'mean' or 'sum'")
        if isinstance(self.weights, dict):
            object.__setattr__(self, "weights", LossWeights(**self.weights))
        for name in ("fc_scales", "oc_scales", "smooth_scales", "betas"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, tuple(value))

    @classmethod
    def from_dict(cls, d: dict) -> "AdaptConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown AdaptConfig keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def load_config(path: str | Path, cls=AdaptConfig):
    """Read a YAML or JSON file into ``cls`` (anything with ``from_dict``)."""
    path = Path(path)
    text = path.read_text()
    data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    return cls.from_dict(data or {})


@dataclass(frozen=True)
class LossBreakdown:
    step: int
    fc: float
    oc: float
    os: float
    total: float


def breakdown(step: int, fc: float, oc: float, os_: float, w: LossWeights) -> LossBreakdown:
    return LossBreakdown(step, fc, oc, os_, w.alpha * fc + w.beta * oc + w.gamma * os_)


def adaptation_losses(
    source_encoder: torch.nn.Module,
    target_encoder: torch.nn.Module,
    decoder: torch.nn.Module,
    i_src: torch.Tensor,
    i_x: torch.Tensor,
    i_src2x: torch.Tensor,
    i_x2src: torch.Tensor,
    cfg: AdaptConfig,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """Return ``(total, fc, oc, os)`` as tensors; only ``target_encoder`` gets gradients.

    ``source_encoder`` sees the real source batch and the fakes made from
    target images; ``target_encoder`` sees the real target batch and the fakes
    made from source images.
    """
    n = i_src.shape[0]
    w = cfg.weights
    with torch.no_grad():
        f_frozen = source_encoder(torch.cat([i_src, i_x2src]))
        o_frozen = decoder(f_frozen)
    f_train = target_encoder(torch.cat([i_x, i_src2x]))

    f_src = [f[:n] for f in f_frozen]
    f_x2src = [f[n:] for f in f_frozen]
    f_x = [f[:n] for f in f_train]
    f_src2x = [f[n:] for f in f_train]
    fc = feature_consistency(f_src, f_src2x, f_x, f_x2src, cfg.fc_scales, cfg.reduction)

    if w.beta > 0 or w.gamma > 0:
        o_train = decoder(f_train)
    else:
        with torch.no_grad():
            o_train = decoder(f_train)
    o_src = [o[:n] for o in o_frozen if o is not None]
    o_x2src = [o[n:] for o in o_frozen if o is not None]
    o_x = [o[:n] for o in o_train]
    o_src2x = [o[n:] for o in o_train]
    oc = depth_consistency(o_src, o_src2x, o_x, o_x2src, cfg.oc_scales, cfg.reduction)

    terms = [smoothness(o_src2x[s], i_src, cfg.paper_exact_smoothness) for s in cfg.smooth_scales]
    if cfg.symmetric_smoothness:
        terms += [smoothness(o_x[s], i_x2src, cfg.paper_exact_smoothness) for s in cfg.smooth_scales]
    os_ = torch.stack(terms).mean()

    total = w.alpha * fc + w.beta * oc + w.gamma * os_
    return total, fc, oc, os_


def _epoch_batches(n_src: int, n_x: int, batch_size: int, seed: int, epoch: int):
    rng = np.random.default_rng([seed, epoch])
    perm_src = rng.permutation(n_src)
    perm_x = rng.permutation(n_x)
    n = min(n_src, n_x)
    bs = min(batch_size, n)
    for start in range(0, n - bs + 1, bs):
        yield perm_src[start : start + bs], perm_x[start : start + bs]


def _transfer_batch(provider: TransferProvider, images: np.ndarray) -> np.ndarray:
    return np.stack([transfer(provider, img) for img in images])


def adapt(
    source_enc: Checkpoint,
    decoder: Checkpoint,
    fwd: TransferProvider,
    bwd: TransferProvider,
    src_pool: Sequence[np.ndarray],
    x_pool: Sequence[np.ndarray],
    cfg: AdaptConfig = AdaptConfig(),
    on_step: Callable[[LossBreakdown], None] | None = None,
    log_path: str | Path | None = None,
) -> Checkpoint:
    """Train an encoder for ``fwd.dst`` starting from ``source_enc``'s weights.

    ``fwd`` maps source-styled images to the target style and ``bwd`` the
    reverse. Pools are unpaired; each epoch shuffles both independently and
    stops when the shorter one runs out. Returns the adapted encoder
    checkpoint, whose ``parent`` is ``source_enc``.
    """
    check_pair(source_enc, decoder)
    if fwd.src != bwd.dst or fwd.dst != bwd.src:
        raise ConfigError(f"providers {fwd.name} and {bwd.name} are not a forward/backward pair")
    src_pool = np.asarray(src_pool, dtype=np.float32)
    x_pool = np.asarray(x_pool, dtype=np.float32)
    if len(src_pool) == 0 or len(x_pool) == 0:
        raise ConfigError("adaptation pools must be non-empty")

    frozen_enc = source_enc.module()
    frozen_dec = decoder.module()
    target = Encoder(source_enc.arch)
    target.load_state_dict(source_enc.state)
    target.train()
    optimizer = torch.optim.Adam(target.parameters(), lr=cfg.learning_rate, betas=cfg.betas)

    log_file = writer = None
    if log_path is not None:
        log_file = open(log_path, "w", newline="")
        writer = csv.writer(log_file)
        writer.writerow(["step", "fc", "oc", "os", "total"])

    step = 0
    try:
        for epoch in range(cfg.epochs):
            for idx_src, idx_x in _epoch_batches(len(src_pool), len(x_pool), cfg.batch_size, cfg.seed, epoch):
                b_src, b_x = src_pool[idx_src], x_pool[idx_x]
                i_src = to_batch(b_src)
                i_x = to_batch(b_x)
                i_src2x = to_batch(_transfer_batch(fwd, b_src))
                i_x2src = to_batch(_transfer_batch(bwd, b_x))

                total, fc, oc, os_ = adaptation_losses(
                    frozen_enc, target, frozen_dec, i_src, i_x, i_src2x, i_x2src, cfg
                )
                record = breakdown(step, float(fc.detach()), float(oc.detach()), float(os_.detach()), cfg.weights)
                if not (torch.isfinite(total) and np.isfinite(record.total)):
                    raise AdaptationError(f"non-finite loss at step {step}: {record}", step, record)
                optimizer.zero_grad(set_to_none=True)
                total.backward()
                if cfg.grad_clip is not None:
                    torch.nn.utils.clip_grad_norm_(target.parameters(), cfg.grad_clip)
                optimizer.step()

                if writer is not None:
                    writer.writerow([record.step, record.fc, record.oc, record.os, record.total])
                if on_step is not None:
                    on_step(record)
                step += 1
            logger.info("epoch %d/%d done, last step %s", epoch + 1, cfg.epochs, step - 1)
    finally:
        if log_file is not None:
            log_file.close()

    return checkpoint_from_module(target, "encoder", fwd.dst, parent=source_enc)


@dataclass(frozen=True)
class Hop:
    fwd: TransferProvider
    bwd: TransferProvider
    src_pool: Sequence[np.ndarray]
    x_pool: Sequence[np.ndarray]


def chain_adapt(
    source_enc: Checkpoint,
    decoder: Checkpoint,
    hops: Sequence[Hop],
    cfg: AdaptConfig = AdaptConfig(),
    on_step: Callable[[LossBreakdown], None] | None = None,
) -> list[Checkpoint]:
    """Adapt hop by hop (e.g. day->night then night->rainy_night); returns every intermediate encoder."""
    if not hops:
        raise ConfigError("chain_adapt needs at least one hop")
    encoders = []
    enc = source_enc
    for i, hop in enumerate(hops):
        if hop.fwd.src != enc.domain:
            raise ConfigError(f"hop {i} starts at {hop.fwd.src!r} but the current encoder is {enc.domain!r}")
        enc = adapt(enc, decoder, hop.fwd, hop.bwd, hop.src_pool, hop.x_pool, cfg, on_step=on_step)
        encoders.append(enc)
    return encoders


def with_weights(cfg: AdaptConfig, weights: LossWeights) -> AdaptConfig:
    return replace(cfg, weights=weights)

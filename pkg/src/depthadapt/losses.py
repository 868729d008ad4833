"""Adaptation losses: feature consistency, depth consistency and edge-aware smoothness.

All functions take and return torch tensors so they can sit inside the
training graph; pass ``float(...)`` on the result for logging.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import torch
import torch.nn.functional as F

from .errors import ConfigError, ShapeError


def psi(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference."""
    a, b = torch.as_tensor(a), torch.as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"psi needs equal shapes, got {tuple(a.shape)} and {tuple(b.shape)}")
    return (a - b).abs().mean()


def _resolve_scales(scales: Iterable[int] | None, available: int, what: str) -> list[int]:
    if scales is None:
        return list(range(available))
    scales = sorted(set(int(s) for s in scales))
    if not scales:
        raise ConfigError(f"{what}: no scales selected")
    bad = [s for s in scales if not 0 <= s < available]
    if bad:
        raise ConfigError(f"{what}: scale index {bad} out of range [0, {available})")
    return scales


def _paired_term(a, b, c, d, scales, reduction):
    terms = [psi(a[k], b[k]) + psi(c[k], d[k]) for k in scales]
    total = torch.stack(terms).sum()
    return total / len(terms) if reduction == "mean" else total


def feature_consistency(
    f_src: Sequence[torch.Tensor],
    f_src2x: Sequence[torch.Tensor],
    f_x: Sequence[torch.Tensor],
    f_x2src: Sequence[torch.Tensor],
    scales: Iterable[int] | None = None,
    reduction: str = "mean",
) -> torch.Tensor:
    """``psi(f_src, f_src2x) + psi(f_x, f_x2src)``, reduced over the selected pyramid levels.

    ``scales=None`` uses every level. ``reduction`` is ``"mean"`` or ``"sum"``
    over levels.
    """
    n = len(f_src)
    if not (len(f_src2x) == len(f_x) == len(f_x2src) == n):
        raise ShapeError("feature pyramids have different level counts")
    return _paired_term(f_src, f_src2x, f_x, f_x2src, _resolve_scales(scales, n, "feature_consistency"), reduction)


def depth_consistency(
    o_src: Sequence[torch.Tensor],
    o_src2x: Sequence[torch.Tensor],
    o_x: Sequence[torch.Tensor],
    o_x2src: Sequence[torch.Tensor],
    scales: Iterable[int] | None = (0,),
    reduction: str = "mean",
) -> torch.Tensor:
    """Same structure as :func:`feature_consistency`, on sigmoid disparity outputs."""
    n = len(o_src)
    if not (len(o_src2x) == len(o_x) == len(o_x2src) == n):
        raise ShapeError("disparity lists have different scale counts")
    return _paired_term(o_src, o_src2x, o_x, o_x2src, _resolve_scales(scales, n, "depth_consistency"), reduction)


def smoothness(disp: torch.Tensor, image: torch.Tensor, paper_exact: bool = False) -> torch.Tensor:
    """Edge-aware smoothness of mean-normalized disparity.

    ``disp`` is ``(N, 1, H, W)`` and ``image`` is ``(N, 3, H, W)``; a coarser
    ``disp`` is upsampled bilinearly to the image size first. Gradients are
    forward differences; the absolute image gradient is averaged over channels. The x and
    y terms are each averaged over their valid region and then added.

    ``paper_exact=True`` weights with ``exp(+dI)`` on the signed image
    gradient instead of the usual ``exp(-|dI|)``.
    """
    if disp.dim() != 4 or image.dim() != 4:
        raise ShapeError("smoothness expects NCHW tensors")
    if disp.shape[-2:] != image.shape[-2:]:
        disp = F.interpolate(disp, size=image.shape[-2:], mode="bilinear", align_corners=False)
    mean = disp.mean(dim=(2, 3), keepdim=True)
    norm = disp / mean

    d_dx = (norm[:, :, :, 1:] - norm[:, :, :, :-1]).abs()
    d_dy = (norm[:, :, 1:, :] - norm[:, :, :-1, :]).abs()
    i_dx = image[:, :, :, 1:] - image[:, :, :, :-1]
    i_dy = image[:, :, 1:, :] - image[:, :, :-1, :]
    if paper_exact:
        w_x = torch.exp(i_dx.mean(dim=1, keepdim=True))
        w_y = torch.exp(i_dy.mean(dim=1, keepdim=True))
    else:
        w_x = torch.exp(-i_dx.abs().mean(dim=1, keepdim=True))
        w_y = torch.exp(-i_dy.abs().mean(dim=1, keepdim=True))
    loss = (d_dx * w_x).mean() + (d_dy * w_y).mean()
    if not torch.isfinite(loss):
        raise FloatingPointError("smoothness loss is not finite")
    return loss

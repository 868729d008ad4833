"""Shared oracles for the unit and acceptance suites."""

import math

import numpy as np
import torch

from depthadapt.depthnet import ArchDescriptor, Encoder, new_checkpoints, to_batch
from depthadapt.trainer import AdaptConfig, adaptation_losses
from depthadapt.transfer import make_inverse, photometric_provider, transfer

GRAD_ARCH = ArchDescriptor(encoder_level_channels=(4, 4, 6), decoder_output_scales=2, input_size=(8, 8))


def loop_metrics(pred, gt, cap, scaling, min_depth=0.1):
    """Scalar-loop reference for the seven depth metrics."""
    ps, gs = [], []
    for p, g in zip(np.ravel(pred).tolist(), np.ravel(gt).tolist()):
        if 0 < g <= cap:
            ps.append(p)
            gs.append(g)
    if scaling == "median":
        ratio = _median(gs) / _median(ps)
        ps = [p * ratio for p in ps]
    ps = [min(max(p, min_depth), cap) for p in ps]
    n = len(gs)
    abs_rel = sq_rel = sq = sq_log = 0.0
    d = [0, 0, 0]
    for p, g in zip(ps, gs):
        abs_rel += abs(p - g) / g
        sq_rel += (p - g) ** 2 / g
        sq += (p - g) ** 2
        sq_log += (math.log(p) - math.log(g)) ** 2
        r = max(p / g, g / p)
        for k in range(3):
            if r < 1.25 ** (k + 1):
                d[k] += 1
    return {
        "abs_rel": abs_rel / n,
        "sq_rel": sq_rel / n,
        "rmse": math.sqrt(sq / n),
        "rmse_log": math.sqrt(sq_log / n),
        "delta1": d[0] / n,
        "delta2": d[1] / n,
        "delta3": d[2] / n,
    }


def _median(xs):
    s = sorted(xs)
    m = len(s) // 2
    return s[m] if len(s) % 2 else 0.5 * (s[m - 1] + s[m])


def loop_smoothness(disp, image, paper_exact=False):
    """Pixel-loop reference for edge-aware smoothness; ``disp`` (H, W), ``image`` (3, H, W)."""
    h, w = len(disp), len(disp[0])
    mean = sum(disp[r][c] for r in range(h) for c in range(w)) / (h * w)
    o = [[disp[r][c] / mean for c in range(w)] for r in range(h)]

    def weight(g):
        return math.exp(sum(g) / 3) if paper_exact else math.exp(-sum(abs(v) for v in g) / 3)

    sx = 0.0
    for r in range(h):
        for c in range(w - 1):
            g = [image[k][r][c + 1] - image[k][r][c] for k in range(3)]
            sx += abs(o[r][c + 1] - o[r][c]) * weight(g)
    sy = 0.0
    for r in range(h - 1):
        for c in range(w):
            g = [image[k][r + 1][c] - image[k][r][c] for k in range(3)]
            sy += abs(o[r + 1][c] - o[r][c]) * weight(g)
    return sx / (h * (w - 1)) + sy / ((h - 1) * w)


def gradient_check(seed=0, step=1e-4, cfg=None):
    """Max relative error between autograd and central differences of the total loss.

    Returns ``(max_rel_err, n_params)``.
    """
    cfg = cfg or AdaptConfig()
    enc, dec = new_checkpoints(GRAD_ARCH, seed=seed)
    src_enc = enc.module(torch.float64)
    decoder = dec.module(torch.float64)
    target = Encoder(GRAD_ARCH).double()
    target.load_state_dict(enc.state)
    gen = torch.Generator().manual_seed(seed + 100)
    with torch.no_grad():
        for p in target.parameters():
            p.add_(0.05 * torch.randn(p.shape, generator=gen, dtype=p.dtype))

    rng = np.random.default_rng(seed)
    fwd = photometric_provider("day", "night", gain=0.6, gamma=1.4, vignette_strength=0.3)
    bwd = make_inverse(fwd)
    i_src = rng.uniform(0.05, 0.95, (2, 8, 8, 3))
    i_x = rng.uniform(0.02, 0.5, (2, 8, 8, 3))
    i_src2x = np.stack([transfer(fwd, im) for im in i_src])
    i_x2src = np.stack([transfer(bwd, im) for im in i_x])
    batch = [to_batch(a, torch.float64) for a in (i_src, i_x, i_src2x, i_x2src)]

    def loss():
        return adaptation_losses(src_enc, target, decoder, *batch, cfg)[0]

    params = list(target.parameters())
    target.zero_grad()
    loss().backward()
    analytic = [p.grad.detach().clone() for p in params]

    worst = 0.0
    n = 0
    with torch.no_grad():
        for p, g in zip(params, analytic):
            flat, gflat = p.view(-1), g.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + step
                up = loss().item()
                flat[i] = orig - step
                down = loss().item()
                flat[i] = orig
                numeric = (up - down) / (2 * step)
                a = gflat[i].item()
                worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), 1e-8))
                n += 1
    return worst, n

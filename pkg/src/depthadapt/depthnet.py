"""Encoder/decoder depth network with separately checkpointed halves.

The encoder turns an image into a feature pyramid whose level ``k`` has
spatial size ``(H / 2**(k+1), W / 2**(k+1))``. The decoder upsamples the
pyramid back with skip connections and emits sigmoid disparity maps at
scales ``1, 1/2, 1/4, ...`` (finest first).
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from safetensors.torch import load as st_load
from safetensors.torch import save as st_save

from .errors import ConfigError, PairingError, ShapeError

logger = logging.getLogger(__name__)

MIN_DEPTH = 0.1
MAX_DEPTH = 100.0

WEIGHTS_FILE = "weights.safetensors"
MANIFEST_FILE = "manifest.json"


@dataclass(frozen=True)
class ArchDescriptor:
    encoder_level_channels: tuple[int, ...] = (16, 24, 32, 48, 64)
    decoder_output_scales: int = 4
    input_size: tuple[int, int] = (64, 64)
    decoder_level_channels: tuple[int, ...] | None = None
    residual: bool = True

    def __post_init__(self):
        object.__setattr__(self, "encoder_level_channels", tuple(int(c) for c in self.encoder_level_channels))
        object.__setattr__(self, "input_size", tuple(int(s) for s in self.input_size))
        if self.decoder_level_channels is None:
            dec = tuple(max(4, c // 2) for c in self.encoder_level_channels)
            object.__setattr__(self, "decoder_level_channels", dec)
        else:
            object.__setattr__(self, "decoder_level_channels", tuple(int(c) for c in self.decoder_level_channels))
        if len(self.decoder_level_channels) != self.num_levels:
            raise ConfigError("decoder_level_channels must have one entry per encoder level")
        if not 1 <= self.decoder_output_scales <= self.num_levels:
            raise ConfigError(f"decoder_output_scales must lie in [1, {self.num_levels}]")

    @property
    def num_levels(self) -> int:
        return len(self.encoder_level_channels)

    @property
    def size_multiple(self) -> int:
        return 2**self.num_levels

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchDescriptor":
        return cls(**d)


DEFAULT_ARCH = ArchDescriptor()


def _conv(cin, cout, stride=1):
    return nn.Conv2d(cin, cout, kernel_size=3, stride=stride, padding=1)


class ResidualBlock(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.conv1 = _conv(channels, channels)
        self.conv2 = _conv(channels, channels)

    def forward(self, x):
        return F.elu(x + self.conv2(F.elu(self.conv1(x))))


class Encoder(nn.Module):
    """Strided conv stages, each optionally followed by one residual block."""

    def __init__(self, arch: ArchDescriptor):
        super().__init__()
        self.arch = arch
        self.down = nn.ModuleList()
        self.blocks = nn.ModuleList()
        cin = 3
        for c in arch.encoder_level_channels:
            self.down.append(_conv(cin, c, stride=2))
            self.blocks.append(ResidualBlock(c) if arch.residual else nn.Identity())
            cin = c
        self.register_buffer("mean", torch.tensor([0.45, 0.45, 0.45]).view(1, 3, 1, 1), persistent=False)
        self.register_buffer("std", torch.tensor([0.225, 0.225, 0.225]).view(1, 3, 1, 1), persistent=False)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        x = (x - self.mean.to(x.dtype)) / self.std.to(x.dtype)
        features = []
        for down, block in zip(self.down, self.blocks):
            x = block(F.elu(down(x)))
            features.append(x)
        return features


class Decoder(nn.Module):
    def __init__(self, arch: ArchDescriptor):
        super().__init__()
        self.arch = arch
        enc, dec = arch.encoder_level_channels, arch.decoder_level_channels
        n = arch.num_levels
        self.upconv0 = nn.ModuleList()
        self.upconv1 = nn.ModuleList()
        self.dispconv = nn.ModuleList()
        # index i here refers to decoder stage i, built deepest first
        for i in range(n - 1, -1, -1):
            cin = enc[-1] if i == n - 1 else dec[i + 1]
            self.upconv0.append(_conv(cin, dec[i]))
            skip = enc[i - 1] if i > 0 else 0
            self.upconv1.append(_conv(dec[i] + skip, dec[i]))
        for s in range(arch.decoder_output_scales):
            self.dispconv.append(_conv(dec[s], 1))

    def forward(self, features: Sequence[torch.Tensor]) -> list[torch.Tensor]:
        n = self.arch.num_levels
        outputs: list[torch.Tensor | None] = [None] * self.arch.decoder_output_scales
        x = features[-1]
        for j, i in enumerate(range(n - 1, -1, -1)):
            x = F.elu(self.upconv0[j](x))
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            if i > 0:
                x = torch.cat([x, features[i - 1]], dim=1)
            x = F.elu(self.upconv1[j](x))
            if i < self.arch.decoder_output_scales:
                outputs[i] = torch.sigmoid(self.dispconv[i](x))
        return outputs


def init_module(module: nn.Module, seed: int) -> nn.Module:
    """Deterministic re-initialisation independent of the global RNG state."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, nn.Conv2d):
                fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
                bound = (3.0 / fan_in) ** 0.5
                m.weight.copy_(torch.rand(m.weight.shape, generator=gen, dtype=m.weight.dtype) * 2 * bound - bound)
                m.bias.copy_((torch.rand(m.bias.shape, generator=gen, dtype=m.bias.dtype) * 2 - 1) * 0.05)
    return module


# ---------------------------------------------------------------------------
# checkpoints


def _archive_bytes(state: dict[str, torch.Tensor]) -> bytes:
    tensors = {k: v.detach().cpu().contiguous() for k, v in sorted(state.items())}
    return st_save(tensors)


@dataclass(frozen=True)
class Checkpoint:
    """Weights of one network half plus the manifest that binds them to a domain.

    ``id`` is the SHA-256 of the serialized tensor archive, so two checkpoints
    with identical weights share an id. ``lineage`` lists ancestor encoder ids,
    oldest first.
    """

    role: str
    domain: str
    arch: ArchDescriptor
    state: dict[str, torch.Tensor] = field(repr=False)
    parent: str | None = None
    lineage: tuple[str, ...] = ()
    content_hash: str = ""

    def __post_init__(self):
        if self.role not in ("encoder", "decoder"):
            raise ConfigError(f"role must be 'encoder' or 'decoder', got {self.role!r}")
        for name, t in self.state.items():
            if not torch.isfinite(t).all():
                raise ConfigError(f"non-finite values in parameter {name!r}")
        digest = hashlib.sha256(self.archive_bytes()).hexdigest()
        if self.content_hash and self.content_hash != digest:
            raise ConfigError(f"content hash mismatch: manifest {self.content_hash} vs archive {digest}")
        object.__setattr__(self, "content_hash", digest)
        object.__setattr__(self, "lineage", tuple(self.lineage))

    @property
    def id(self) -> str:
        return self.content_hash

    def archive_bytes(self) -> bytes:
        return _archive_bytes(self.state)

    def manifest(self) -> dict:
        return {
            "role": self.role,
            "domain": self.domain,
            "arch": self.arch.to_dict(),
            "parent": self.parent,
            "lineage": list(self.lineage),
            "content_hash": self.content_hash,
        }

    def module(self, dtype: torch.dtype = torch.float32) -> nn.Module:
        """Build the network half in inference mode with gradients disabled.

        Modules are cached per dtype; the checkpoint itself never changes.
        """
        cache = self.__dict__.setdefault("_modules_cache", {})
        if dtype not in cache:
            net = Encoder(self.arch) if self.role == "encoder" else Decoder(self.arch)
            net.load_state_dict(self.state)
            net = net.to(dtype).eval()
            for p in net.parameters():
                p.requires_grad_(False)
            cache[dtype] = net
        return cache[dtype]


def checkpoint_from_module(
    module: nn.Module, role: str, domain: str, parent: Checkpoint | None = None
) -> Checkpoint:
    state = {k: v.detach().to(torch.float32).clone() for k, v in module.state_dict().items()}
    lineage: tuple[str, ...] = ()
    if parent is not None:
        lineage = tuple(parent.lineage) + (parent.id,)
    return Checkpoint(
        role=role,
        domain=domain,
        arch=module.arch,
        state=state,
        parent=parent.id if parent is not None else None,
        lineage=lineage,
    )


def new_checkpoints(arch: ArchDescriptor = DEFAULT_ARCH, seed: int = 0, domain: str = "day"):
    """Freshly initialised ``(encoder, decoder)`` checkpoints."""
    enc = init_module(Encoder(arch), seed)
    dec = init_module(Decoder(arch), seed + 1)
    return checkpoint_from_module(enc, "encoder", domain), checkpoint_from_module(dec, "decoder", domain)


def save_checkpoint(ckpt: Checkpoint, directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / WEIGHTS_FILE).write_bytes(ckpt.archive_bytes())
    (directory / MANIFEST_FILE).write_text(json.dumps(ckpt.manifest(), indent=2, sort_keys=True) + "\n")
    return directory


def load_checkpoint(directory: str | Path) -> Checkpoint:
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST_FILE).read_text())
    state = st_load((directory / WEIGHTS_FILE).read_bytes())
    return Checkpoint(
        role=manifest["role"],
        domain=manifest["domain"],
        arch=ArchDescriptor.from_dict(manifest["arch"]),
        state=state,
        parent=manifest.get("parent"),
        lineage=tuple(manifest.get("lineage", ())),
        content_hash=manifest["content_hash"],
    )


def import_external(conversion_manifest: str | Path) -> Checkpoint:
    """Convert an external state dict into a checkpoint.

    The conversion manifest is JSON with keys ``role``, ``domain``, ``arch``
    (an architecture dict), ``weights`` (path to a ``.safetensors`` or torch
    ``.pt`` state dict, relative to the manifest) and an optional ``key_map``
    from external parameter names to ours. Unmapped names pass through.
    """
    path = Path(conversion_manifest)
    spec = json.loads(path.read_text())
    weights_path = Path(spec["weights"])
    if not weights_path.is_absolute():
        weights_path = path.parent / weights_path
    if weights_path.suffix == ".safetensors":
        external = st_load(weights_path.read_bytes())
    else:
        external = torch.load(weights_path, map_location="cpu", weights_only=True)
    key_map = spec.get("key_map", {})
    state = {key_map.get(k, k): v.to(torch.float32) for k, v in external.items()}
    arch = ArchDescriptor.from_dict(spec["arch"])
    net = Encoder(arch) if spec["role"] == "encoder" else Decoder(arch)
    expected = net.state_dict()
    missing = sorted(set(expected) - set(state))
    unexpected = sorted(set(state) - set(expected))
    if missing or unexpected:
        raise PairingError(f"external weights do not fit the architecture: missing={missing} unexpected={unexpected}")
    for k, v in expected.items():
        if tuple(state[k].shape) != tuple(v.shape):
            raise ShapeError(f"parameter {k}: expected shape {tuple(v.shape)}, got {tuple(state[k].shape)}")
    return Checkpoint(role=spec["role"], domain=spec["domain"], arch=arch, state=state)


# ---------------------------------------------------------------------------
# inference


def check_pair(enc: Checkpoint, dec: Checkpoint) -> None:
    if enc.role != "encoder" or dec.role != "decoder":
        raise PairingError(f"expected (encoder, decoder), got ({enc.role}, {dec.role})")
    if enc.arch != dec.arch:
        raise PairingError(f"architecture mismatch: encoder {enc.arch} vs decoder {dec.arch}")


def to_batch(images, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """``(H, W, 3)`` or ``(N, H, W, 3)`` arrays become an ``(N, 3, H, W)`` tensor.

    Tensors are assumed to already be in NCHW layout.
    """
    if isinstance(images, torch.Tensor):
        t = images if images.dim() == 4 else images.unsqueeze(0)
        return t.to(dtype)
    arr = np.asarray(images)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise ShapeError(f"expected image array of shape (H, W, 3) or (N, H, W, 3), got {arr.shape}")
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2))).to(dtype)


def check_input(arch: ArchDescriptor, x: torch.Tensor) -> None:
    h, w = x.shape[-2:]
    m = arch.size_multiple
    if (h, w) == tuple(arch.input_size):
        return
    for name, size in (("height", h), ("width", w)):
        if size % m:
            raise ShapeError(f"input {name} {size} is not divisible by {m}")


def encode(enc: Checkpoint, image, dtype: torch.dtype = torch.float32) -> list[torch.Tensor]:
    if enc.role != "encoder":
        raise PairingError(f"encode needs an encoder checkpoint, got {enc.role}")
    x = to_batch(image, dtype)
    check_input(enc.arch, x)
    with torch.no_grad():
        return enc.module(dtype)(x)


def decode(dec: Checkpoint, features: Sequence[torch.Tensor]) -> list[torch.Tensor]:
    if dec.role != "decoder":
        raise PairingError(f"decode needs a decoder checkpoint, got {dec.role}")
    arch = dec.arch
    if len(features) != arch.num_levels:
        raise PairingError(f"pyramid has {len(features)} levels, decoder expects {arch.num_levels}")
    for k, (f, c) in enumerate(zip(features, arch.encoder_level_channels)):
        if f.shape[1] != c:
            raise PairingError(f"pyramid level {k} has {f.shape[1]} channels, decoder expects {c}")
        if k and f.shape[-1] * 2 != features[k - 1].shape[-1]:
            raise ShapeError(f"pyramid level {k} does not halve level {k - 1}")
    dtype = features[0].dtype
    with torch.no_grad():
        return dec.module(dtype)(features)


def disparity_to_depth(disp, min_depth: float = MIN_DEPTH, max_depth: float = MAX_DEPTH):
    """Map sigmoid disparity to metric depth, affine in inverse depth.

    ``1/depth = 1/max_depth + disp * (1/min_depth - 1/max_depth)``
    """
    if not 0 < min_depth < max_depth:
        raise ConfigError(f"need 0 < min_depth < max_depth, got {min_depth}, {max_depth}")
    lo, hi = 1.0 / max_depth, 1.0 / min_depth
    return 1.0 / (lo + (hi - lo) * disp)


def predict(
    enc: Checkpoint,
    dec: Checkpoint,
    image,
    min_depth: float = MIN_DEPTH,
    max_depth: float = MAX_DEPTH,
) -> np.ndarray:
    """One-step depth inference; returns ``(H, W)`` for one image, ``(N, H, W)`` for a batch."""
    check_pair(enc, dec)
    disp = decode(dec, encode(enc, image))[0][:, 0]
    depth = disparity_to_depth(disp, min_depth, max_depth).numpy()
    single = not isinstance(image, torch.Tensor) and np.asarray(image).ndim == 3
    return depth[0] if single else depth

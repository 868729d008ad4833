"""Serve depth from per-domain encoders that share one decoder.

:class:`EncoderRegistry` is immutable: ``register`` returns a new snapshot.
:class:`DepthService` holds the current snapshot and swaps it under a lock, so
in-flight inference keeps using the snapshot it started with.
"""

from __future__ import annotations

import logging
import threading
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

import numpy as np
from matplotlib import colormaps
from PIL import Image
from PIL.PngImagePlugin import PngInfo

from .depthnet import Checkpoint, load_checkpoint, predict, save_checkpoint
from .errors import PairingError, RegistryError

logger = logging.getLogger(__name__)

PNG16_SCALE = 1.0 / 256.0
COLORMAP = "magma"  # perceptually uniform; bright = near


class EncoderRegistry:
    def __init__(self, decoder: Checkpoint, encoders: Mapping[str, Checkpoint] | None = None):
        if decoder.role != "decoder":
            raise PairingError(f"registry needs a decoder checkpoint, got {decoder.role}")
        self._decoder = decoder
        checked = {}
        for tag, enc in (encoders or {}).items():
            self._check(tag, enc)
            checked[tag] = enc
        self._encoders = MappingProxyType(checked)

    @property
    def decoder(self) -> Checkpoint:
        return self._decoder

    @property
    def encoders(self) -> Mapping[str, Checkpoint]:
        return self._encoders

    @property
    def tags(self) -> list[str]:
        return list(self._encoders)

    def _check(self, tag: str, enc: Checkpoint) -> None:
        if enc.role != "encoder":
            raise PairingError(f"cannot register a {enc.role} checkpoint under {tag!r}")
        if enc.arch != self._decoder.arch:
            raise PairingError(
                f"encoder for {tag!r} has architecture {enc.arch}, decoder has {self._decoder.arch}"
            )

    def register(self, tag: str, enc: Checkpoint) -> "EncoderRegistry":
        self._check(tag, enc)
        if tag in self._encoders:
            logger.warning("replacing encoder for domain %r (%s -> %s)", tag, self._encoders[tag].id[:12], enc.id[:12])
        encoders = dict(self._encoders)
        encoders[tag] = enc
        return EncoderRegistry(self._decoder, encoders)

    def encoder(self, tag: str) -> Checkpoint:
        try:
            return self._encoders[tag]
        except KeyError:
            raise RegistryError(f"unknown domain {tag!r}; registered: {sorted(self._encoders)}") from None

    def infer(self, tag: str, image: np.ndarray) -> np.ndarray:
        return predict(self.encoder(tag), self._decoder, image)

    def save(self, directory: str | Path) -> Path:
        """Write ``decoder/`` plus one ``encoder-<tag>/`` checkpoint directory per domain."""
        directory = Path(directory)
        save_checkpoint(self._decoder, directory / "decoder")
        for tag, enc in self._encoders.items():
            save_checkpoint(enc, directory / f"encoder-{tag}")
        return directory

    @classmethod
    def load(cls, directory: str | Path) -> "EncoderRegistry":
        directory = Path(directory)
        if not (directory / "decoder").is_dir():
            raise RegistryError(f"{directory} has no decoder/ checkpoint")
        encoders = {}
        for sub in sorted(directory.glob("encoder-*")):
            if sub.is_dir():
                encoders[sub.name[len("encoder-") :]] = load_checkpoint(sub)
        return cls(load_checkpoint(directory / "decoder"), encoders)


def register(registry: EncoderRegistry, tag: str, enc: Checkpoint) -> EncoderRegistry:
    return registry.register(tag, enc)


def infer(registry: EncoderRegistry, tag: str, image: np.ndarray) -> np.ndarray:
    return registry.infer(tag, image)


class DepthService:
    """Mutable handle over immutable registry snapshots."""

    def __init__(self, registry: EncoderRegistry):
        self._registry = registry
        self._lock = threading.Lock()

    @property
    def registry(self) -> EncoderRegistry:
        return self._registry

    def register(self, tag: str, enc: Checkpoint) -> EncoderRegistry:
        with self._lock:
            self._registry = self._registry.register(tag, enc)
            return self._registry

    def infer(self, tag: str, image: np.ndarray) -> np.ndarray:
        snapshot = self._registry
        return snapshot.infer(tag, image)


# ---------------------------------------------------------------------------
# export


def colorize(depth: np.ndarray) -> np.ndarray:
    """RGB uint8 rendering of normalized inverse depth (near is the bright end)."""
    inv = 1.0 / np.asarray(depth, dtype=np.float64)
    lo, hi = inv.min(), inv.max()
    norm = np.full_like(inv, 0.5) if hi - lo <= 0 else (inv - lo) / (hi - lo)
    rgba = colormaps[COLORMAP](norm)
    return (rgba[..., :3] * 255).round().astype(np.uint8)


def export_depth(depth: np.ndarray, path: str | Path, format: str = "png16") -> Path:
    path = Path(path)
    depth = np.asarray(depth)
    if depth.ndim != 2 or not np.isfinite(depth).all() or (depth < 0).any():
        raise ValueError(f"cannot export depth map with shape {depth.shape} / invalid values")
    try:
        if format == "png16":
            arr = np.clip(np.round(depth.astype(np.float64) / PNG16_SCALE), 0, 65535).astype(np.uint16)
            info = PngInfo()
            info.add_text("depth_scale", repr(PNG16_SCALE))
            info.add_text("unit", "meter")
            Image.fromarray(arr).save(path, pnginfo=info)
        elif format == "colorized":
            Image.fromarray(colorize(depth)).save(path)
        else:
            raise ValueError(f"unknown export format {format!r}")
    except OSError as exc:
        raise OSError(f"failed to write depth map to {path}: {exc}") from exc
    return path


def import_depth_png16(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        scale = float(im.info.get("depth_scale", PNG16_SCALE))
        arr = np.array(im)
    return arr.astype(np.float64) * scale

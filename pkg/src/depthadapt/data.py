"""Dataset ingestion, synthetic scene rendering and photometric domain shifts.

Images are ``float32`` arrays of shape ``(H, W, 3)`` with values in ``[0, 1]``.
Ground-truth depth maps are ``float32`` arrays of shape ``(H, W)`` in meters,
where ``0`` marks a pixel without a measurement.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .errors import ConfigError, DatasetError

logger = logging.getLogger(__name__)

BUILTIN_DOMAINS = ("day", "night", "rainy_night", "snowy_winter")

# Spatial dims must survive this many 2x downsamplings.
SIZE_MULTIPLE = 32


class DomainRegistry:
    """Set of known domain names; ``day`` is always present."""

    def __init__(self, extra: Sequence[str] = ()):
        self._names: list[str] = list(BUILTIN_DOMAINS)
        for name in extra:
            self.register(name)

    def register(self, name: str) -> str:
        name = str(name).strip()
        if not name or any(c in name for c in " ,/\\"):
            raise ConfigError(f"invalid domain name {name!r}")
        if name in self._names:
            raise ConfigError(f"domain {name!r} already registered")
        self._names.append(name)
        return name

    def validate(self, name: str) -> str:
        if name not in self._names:
            raise ConfigError(f"unknown domain {name!r}; known: {self._names}")
        return name

    def __contains__(self, name) -> bool:
        return name in self._names

    def __iter__(self):
        return iter(self._names)

    def __len__(self):
        return len(self._names)


@dataclass(frozen=True)
class PreprocessConfig:
    """Crop rectangle ``(top, left, bottom, right)`` in source pixels, then resize.

    The default drops the bottom of a 1280x960 frame (car hood) and resizes
    to 512x256.
    """

    crop: tuple[int, int, int, int] | None = (0, 0, 800, 1280)
    size: tuple[int, int] = (256, 512)  # (H, W)

    def __post_init__(self):
        h, w = self.size
        if h <= 0 or w <= 0 or h % SIZE_MULTIPLE or w % SIZE_MULTIPLE:
            raise ConfigError(
                f"target resolution {h}x{w} (HxW) is not divisible by {SIZE_MULTIPLE}"
            )
        if self.crop is not None:
            top, left, bottom, right = self.crop
            if not (0 <= top < bottom and 0 <= left < right):
                raise ConfigError(f"invalid crop rectangle {self.crop}")


@dataclass(frozen=True)
class SampleRecord:
    image_path: Path
    depth_path: Path | None
    domain: str
    split: str
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    depth_scale: float = 1.0 / 256.0  # meters per unit for 16-bit depth PNGs


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    num_shapes: int = 5
    depth_range: tuple[float, float] = (3.0, 80.0)
    image_size: tuple[int, int] = (64, 64)

    def __post_init__(self):
        lo, hi = self.depth_range
        if not (0 < lo < hi):
            raise ConfigError(f"depth_range must satisfy 0 < min < max, got {self.depth_range}")
        if self.num_shapes < 0:
            raise ConfigError("num_shapes must be >= 0")
        h, w = self.image_size
        if h < 2 or w < 2:
            raise ConfigError(f"image_size too small: {self.image_size}")


@dataclass(frozen=True)
class ShiftParams:
    gain: float = 1.0
    gamma: float = 1.0
    vignette_strength: float = 0.0
    noise_sigma: float = 0.0
    light_blobs: int = 0

    def __post_init__(self):
        if not self.gain > 0 or not self.gamma > 0:
            raise ConfigError("gain and gamma must be > 0")
        if not 0.0 <= self.vignette_strength <= 1.0:
            raise ConfigError("vignette_strength must lie in [0, 1]")
        if self.noise_sigma < 0 or self.light_blobs < 0:
            raise ConfigError("noise_sigma and light_blobs must be >= 0")


IDENTITY_SHIFT = ShiftParams()


# ---------------------------------------------------------------------------
# photometric primitives (shared with the transfer oracle)


def vignette_profile(height: int, width: int, strength: float) -> np.ndarray:
    """Radial falloff ``1 - strength * r**2`` with ``r = 1`` at the corners."""
    ys = np.arange(height, dtype=np.float64) - (height - 1) / 2.0
    xs = np.arange(width, dtype=np.float64) - (width - 1) / 2.0
    ny = ys / max((height - 1) / 2.0, 1e-12)
    nx = xs / max((width - 1) / 2.0, 1e-12)
    r2 = (ny[:, None] ** 2 + nx[None, :] ** 2) / 2.0
    return 1.0 - strength * r2


def photometric_map(image: np.ndarray, gain: float, gamma: float, vignette_strength: float) -> np.ndarray:
    """``clamp((gain * v) ** gamma * vignette(x, y))``, computed in float64."""
    v = np.asarray(image, dtype=np.float64)
    out = np.power(gain * v, gamma)
    if vignette_strength != 0.0:
        out = out * vignette_profile(v.shape[0], v.shape[1], vignette_strength)[:, :, None]
    return np.clip(out, 0.0, 1.0)


def _light_blobs(rng: np.random.Generator, height: int, width: int, count: int) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    out = np.zeros((height, width, 3))
    tint = np.array([1.0, 0.85, 0.6])
    for _ in range(count):
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        sigma = rng.uniform(width / 40.0, width / 12.0)
        amp = rng.uniform(0.3, 0.8)
        blob = amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
        out += blob[:, :, None] * tint
    return out


def apply_shift(image: np.ndarray, params: ShiftParams, seed: int = 0) -> np.ndarray:
    """Simulate a capture under a different domain (darkening, vignetting, sensor noise, lamps)."""
    image = np.asarray(image)
    out = photometric_map(image, params.gain, params.gamma, params.vignette_strength)
    if params.light_blobs or params.noise_sigma:
        rng = np.random.default_rng(seed)
        if params.light_blobs:
            out = out + _light_blobs(rng, image.shape[0], image.shape[1], params.light_blobs)
        if params.noise_sigma:
            out = out + rng.normal(0.0, params.noise_sigma, size=out.shape)
        out = np.clip(out, 0.0, 1.0)
    return out.astype(image.dtype if image.dtype.kind == "f" else np.float32)


# ---------------------------------------------------------------------------
# synthetic scenes


def ground_depth(height: int, depth_range: tuple[float, float]) -> np.ndarray:
    """Depth of a flat ground plane per image row; inverse depth is linear in the row.

    The bottom row sits at ``depth_range[0]`` and the top row at ``depth_range[1]``,
    so depth grows with the row index counted upward from the image bottom.
    """
    lo, hi = depth_range
    t = np.arange(height, dtype=np.float64) / (height - 1)
    inv = 1.0 / hi + t * (1.0 / lo - 1.0 / hi)
    return 1.0 / inv


def _haze(color: np.ndarray, depth: np.ndarray, far: float) -> np.ndarray:
    k = 1.0 - np.exp(-depth / far)
    haze = np.array([0.72, 0.76, 0.82])
    return color * (1.0 - k[..., None]) + haze * k[..., None]


def generate_scene(spec: SceneSpec) -> tuple[np.ndarray, np.ndarray]:
    """Render textured fronto-parallel boards standing on a ground plane.

    Boards are painted far to near; each carries a constant depth equal to the
    ground depth at its bottom edge and a base color distinct from the ground,
    so every depth discontinuity coincides with an intensity edge.
    """
    h, w = spec.image_size
    lo, hi = spec.depth_range
    rng = np.random.default_rng(spec.seed)
    focal = float(w)

    row_depth = ground_depth(h, spec.depth_range)
    depth = np.repeat(row_depth[:, None], w, axis=1)

    # ground: perspective checker in world coordinates
    xs = (np.arange(w) - (w - 1) / 2.0)[None, :] * depth / focal
    period = rng.uniform(1.5, 3.0)
    ground_base = rng.uniform(0.12, 0.25) * np.array([1.0, 0.95, 0.9]) * rng.uniform(0.85, 1.15, 3)
    pattern = np.sin(2 * np.pi * depth / period) * np.sin(2 * np.pi * xs / period)
    fade = np.exp(-depth / (0.25 * hi))
    image = ground_base[None, None, :] * (1.0 + 0.45 * pattern * fade)[:, :, None]

    boards = []
    for _ in range(spec.num_shapes):
        bottom = int(rng.integers(int(0.3 * h), int(0.92 * h)))
        z = row_depth[bottom]
        height_m = rng.uniform(0.6, 2.5)
        width_m = rng.uniform(0.6, 2.5)
        cx = rng.uniform(0, w)
        color = rng.uniform(0.55, 1.0, 3)
        stripe_m = rng.uniform(0.3, 1.0)
        boards.append((z, bottom, height_m, width_m, cx, color, stripe_m))
    boards.sort(key=lambda b: -b[0])

    cols = np.arange(w)
    for z, bottom, height_m, width_m, cx, color, stripe_m in boards:
        ph = max(2, int(round(focal * height_m / z)))
        pw = max(2, int(round(focal * width_m / z)))
        top = max(0, bottom - ph + 1)
        left = max(0, int(round(cx - pw / 2)))
        right = min(w, left + pw)
        if right - left < 1:
            continue
        wx = (cols[left:right] - (w - 1) / 2.0) * z / focal
        stripes = 1.0 + 0.25 * np.sin(2 * np.pi * wx / stripe_m)
        patch = color[None, None, :] * stripes[None, :, None]
        image[top : bottom + 1, left:right] = patch
        depth[top : bottom + 1, left:right] = z

    image = _haze(image, depth, hi)
    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    depth = np.clip(depth, lo, hi).astype(np.float32)
    return image, depth


def make_benchmark(num_scenes: int, seed: int = 0, **spec_kwargs) -> tuple[np.ndarray, np.ndarray]:
    """Stack ``num_scenes`` scenes with per-scene seeds derived from ``seed``."""
    ss = np.random.SeedSequence(seed)
    seeds = ss.generate_state(num_scenes, dtype=np.uint32)
    shapes = spec_kwargs.pop("num_shapes", None)
    images, depths = [], []
    for s in seeds:
        n = shapes if shapes is not None else int(np.random.default_rng(int(s)).integers(2, 8))
        img, dep = generate_scene(SceneSpec(seed=int(s), num_shapes=n, **spec_kwargs))
        images.append(img)
        depths.append(dep)
    if not images:
        h, w = spec_kwargs.get("image_size", SceneSpec().image_size)
        return np.zeros((0, h, w, 3), np.float32), np.zeros((0, h, w), np.float32)
    return np.stack(images), np.stack(depths)


def shift_pool(images: Sequence[np.ndarray], params: ShiftParams, seed: int = 0) -> np.ndarray:
    """Apply ``params`` to every image with a distinct, reproducible noise seed each."""
    if len(images) == 0:
        return np.asarray(images, dtype=np.float32)
    seeds = np.random.SeedSequence(seed).generate_state(len(images), dtype=np.uint32)
    return np.stack([apply_shift(img, params, int(s)) for img, s in zip(images, seeds)])


# ---------------------------------------------------------------------------
# on-disk datasets


MANIFEST_HEADER = ["path", "depth_path", "domain", "split"]


def _parse_header_comments(lines: list[str]) -> dict[str, str]:
    meta = {}
    for line in lines:
        body = line.lstrip("#").strip()
        if ":" in body:
            key, value = body.split(":", 1)
            meta[key.strip().lower()] = value.strip()
    return meta


def _preprocess_from_meta(meta: dict[str, str], default: PreprocessConfig) -> PreprocessConfig:
    crop, size = default.crop, default.size
    if "crop" in meta:
        value = meta["crop"].lower()
        crop = None if value in ("none", "") else tuple(int(v) for v in value.split(","))
    if "size" in meta:
        h, w = meta["size"].lower().split("x")
        size = (int(h), int(w))
    return PreprocessConfig(crop=crop, size=size)


def load_dataset(
    root: str | Path,
    manifest: str | Path,
    preprocess: PreprocessConfig | None = None,
    domains: DomainRegistry | None = None,
) -> list[SampleRecord]:
    """Read a CSV manifest (``path,depth_path,domain,split``) into records.

    Leading ``# key: value`` comment lines may declare ``depth_scale`` (meters
    per unit of 16-bit depth PNGs), ``crop`` (``top,left,bottom,right`` or
    ``none``) and ``size`` (``HxW``). An explicit ``preprocess`` argument wins
    over the manifest comments.
    """
    root = Path(root)
    manifest = Path(manifest)
    if not manifest.is_absolute() and not manifest.exists():
        manifest = root / manifest
    domains = domains or DomainRegistry()
    text = manifest.read_text()
    comment_lines = []
    body_lines = []
    for line in text.splitlines():
        if line.startswith("#"):
            comment_lines.append(line)
        elif line.strip():
            body_lines.append(line)
    meta = _parse_header_comments(comment_lines)
    if preprocess is None:
        preprocess = _preprocess_from_meta(meta, PreprocessConfig())
    depth_scale = float(meta.get("depth_scale", 1.0 / 256.0))

    reader = csv.DictReader(io.StringIO("\n".join(body_lines)))
    if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != MANIFEST_HEADER:
        raise ConfigError(f"manifest header must be {','.join(MANIFEST_HEADER)}, got {reader.fieldnames}")

    records, problems = [], []
    for row in reader:
        image_path = (root / row["path"].strip()).resolve()
        depth_field = (row.get("depth_path") or "").strip()
        depth_path = (root / depth_field).resolve() if depth_field else None
        split = row["split"].strip()
        domain = row["domain"].strip()
        if split not in ("train", "test"):
            problems.append((image_path, f"unknown split {split!r}"))
        if domain not in domains:
            problems.append((image_path, f"unknown domain {domain!r}"))
        if not image_path.is_file():
            problems.append((image_path, "image file not found"))
        if split == "test" and depth_path is None:
            problems.append((image_path, "test record has no depth_path"))
        if depth_path is not None and not depth_path.is_file():
            problems.append((depth_path, "depth file not found"))
        records.append(SampleRecord(image_path, depth_path, domain, split, preprocess, depth_scale))
    if problems:
        raise DatasetError(problems)
    return records


def _crop(arr: np.ndarray, crop, path) -> np.ndarray:
    if crop is None:
        return arr
    top, left, bottom, right = crop
    if bottom > arr.shape[0] or right > arr.shape[1]:
        raise ConfigError(f"crop {crop} exceeds image size {arr.shape[:2]} of {path}")
    return arr[top:bottom, left:right]


def read_image(path: str | Path, preprocess: PreprocessConfig | None = None) -> np.ndarray:
    """Load an 8- or 16-bit PNG as an ``(H, W, 3)`` float image in ``[0, 1]``."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            arr = np.array(im)
    except (OSError, ValueError) as exc:
        raise DatasetError([(path, str(exc))]) from exc
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float32) / 255.0
    elif arr.dtype in (np.uint16, np.int32):
        arr = arr.astype(np.float32) / 65535.0
    else:
        arr = arr.astype(np.float32)
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    arr = arr[:, :, :3]
    if preprocess is None:
        return np.clip(arr, 0.0, 1.0)
    arr = _crop(arr, preprocess.crop, path)
    h, w = preprocess.size
    if arr.shape[:2] != (h, w):
        chans = [
            np.array(Image.fromarray(arr[:, :, c], mode="F").resize((w, h), Image.BILINEAR))
            for c in range(3)
        ]
        arr = np.stack(chans, axis=2)
    return np.clip(arr, 0.0, 1.0).astype(np.float32)


def read_depth(
    path: str | Path, preprocess: PreprocessConfig | None = None, depth_scale: float = 1.0 / 256.0
) -> np.ndarray:
    """Load ground truth from a 16-bit PNG (scaled) or a float ``.npy`` sidecar."""
    path = Path(path)
    try:
        if path.suffix == ".npy":
            arr = np.load(path).astype(np.float32)
        else:
            with Image.open(path) as im:
                arr = np.array(im).astype(np.float64) * depth_scale
            arr = arr.astype(np.float32)
    except (OSError, ValueError) as exc:
        raise DatasetError([(path, str(exc))]) from exc
    if preprocess is None:
        return arr
    arr = _crop(arr, preprocess.crop, path)
    h, w = preprocess.size
    if arr.shape != (h, w):
        arr = np.array(Image.fromarray(arr, mode="F").resize((w, h), Image.NEAREST))
    return arr


def load_sample(record: SampleRecord) -> tuple[np.ndarray, np.ndarray | None]:
    image = read_image(record.image_path, record.preprocess)
    depth = None
    if record.depth_path is not None:
        depth = read_depth(record.depth_path, record.preprocess, record.depth_scale)
    return image, depth


def load_images(records: Sequence[SampleRecord]) -> np.ndarray:
    return np.stack([read_image(r.image_path, r.preprocess) for r in records])


def write_png8(path: str | Path, image: np.ndarray) -> None:
    arr = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr).save(path)


def write_depth_png16(path: str | Path, depth: np.ndarray, depth_scale: float = 1.0 / 256.0) -> None:
    arr = np.clip(np.round(np.asarray(depth, dtype=np.float64) / depth_scale), 0, 65535).astype(np.uint16)
    Image.fromarray(arr).save(path)


def write_benchmark(
    out_dir: str | Path,
    num_train: int,
    num_test: int,
    seed: int = 0,
    shift: ShiftParams | None = None,
    domain: str = "day",
    image_size: tuple[int, int] = (64, 64),
    depth_range: tuple[float, float] = (3.0, 80.0),
) -> Path:
    """Render a synthetic benchmark to PNG files plus a manifest; return the manifest path.

    Train and test scenes use disjoint seeds. With ``shift`` set, images are
    passed through :func:`apply_shift` and tagged with ``domain``.
    """
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "depth").mkdir(parents=True, exist_ok=True)
    scale = 1.0 / 256.0
    rows = []
    for split, count, split_seed in (("train", num_train, seed), ("test", num_test, seed + 1_000_003)):
        images, depths = make_benchmark(count, split_seed, image_size=image_size, depth_range=depth_range)
        if shift is not None:
            images = shift_pool(images, shift, split_seed)
        for i, (img, dep) in enumerate(zip(images, depths)):
            name = f"{domain}_{split}_{i:05d}"
            write_png8(out_dir / "images" / f"{name}.png", img)
            write_depth_png16(out_dir / "depth" / f"{name}.png", dep, scale)
            depth_rel = f"depth/{name}.png"
            rows.append((f"images/{name}.png", depth_rel, domain, split))
    manifest = out_dir / "manifest.csv"
    h, w = image_size
    with open(manifest, "w", newline="") as fh:
        fh.write(f"# depth_scale: {scale!r}\n# crop: none\n# size: {h}x{w}\n")
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        writer.writerows(rows)
    return manifest


def with_preprocess(records: Sequence[SampleRecord], preprocess: PreprocessConfig) -> list[SampleRecord]:
    return [replace(r, preprocess=preprocess) for r in records]

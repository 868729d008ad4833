"""Image transfer providers: render an image of one domain in another domain's style.

Two kinds exist. ``photometric_oracle`` providers apply an invertible chain of
gain/gamma/vignette stages (optionally preceded by a smoothing prefilter)
and are used for hermetic experiments. ``external``
providers wrap a pre-exported forward function (a ``torch.export`` ``.pt2``
archive, a TorchScript file or a ``module:function`` reference) such as a trained CycleGAN generator.
"""

from __future__ import annotations

import importlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
from scipy.ndimage import gaussian_filter

from .data import photometric_map, vignette_profile
from .errors import ConfigError, ProviderError


@dataclass(frozen=True)
class PhotometricStage:
    """Forward stage: ``v -> clamp((gain*v)**gamma * vignette)``.

    An inverted stage runs the operations in reverse order:
    ``v -> clamp((v / vignette)**gamma * gain)``, with ``gain`` and ``gamma``
    already holding the reciprocals of the forward stage.
    """

    gain: float = 1.0
    gamma: float = 1.0
    vignette_strength: float = 0.0
    inverted: bool = False

    def __post_init__(self):
        if not self.gain > 0 or not self.gamma > 0:
            raise ConfigError("stage gain and gamma must be > 0")
        if not 0.0 <= self.vignette_strength <= 1.0:
            raise ConfigError("vignette_strength must lie in [0, 1]")

    def apply(self, image: np.ndarray) -> np.ndarray:
        if not self.inverted:
            return photometric_map(image, self.gain, self.gamma, self.vignette_strength)
        v = np.asarray(image, dtype=np.float64)
        if self.vignette_strength != 0.0:
            v = v / vignette_profile(v.shape[0], v.shape[1], self.vignette_strength)[:, :, None]
        return np.clip(np.power(v, self.gamma) * self.gain, 0.0, 1.0)

    def inverse(self) -> "PhotometricStage":
        if self.vignette_strength >= 1.0:
            raise ProviderError("vignette with strength 1 zeroes the corners and cannot be inverted")
        return PhotometricStage(1.0 / self.gain, 1.0 / self.gamma, self.vignette_strength, not self.inverted)


@dataclass(frozen=True)
class SmoothingStage:
    """Spatial Gaussian prefilter; stands in for the clean output of a learned generator."""

    sigma: float = 0.8

    def __post_init__(self):
        if self.sigma < 0:
            raise ConfigError("smoothing sigma must be >= 0")

    def apply(self, image: np.ndarray) -> np.ndarray:
        v = np.asarray(image, dtype=np.float64)
        if self.sigma == 0:
            return v
        return gaussian_filter(v, sigma=(self.sigma, self.sigma, 0), mode="nearest")

    def inverse(self):
        raise ProviderError("a smoothing stage cannot be inverted")


@dataclass(frozen=True)
class TransferProvider:
    src: str
    dst: str
    kind: str = "photometric_oracle"
    stages: tuple[PhotometricStage, ...] = ()
    model_ref: str | None = None
    _fn: Callable | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("photometric_oracle", "external"):
            raise ConfigError(f"unknown provider kind {self.kind!r}")
        if self.kind == "external" and not self.model_ref:
            raise ConfigError("external providers need a model_ref")
        object.__setattr__(self, "stages", tuple(self.stages))

    @property
    def name(self) -> str:
        return f"{self.src}->{self.dst}"

    def __call__(self, image: np.ndarray) -> np.ndarray:
        return transfer(self, image)

    def to_dict(self) -> dict:
        d = {"src": self.src, "dst": self.dst, "kind": self.kind}
        if self.kind == "photometric_oracle":
            d["params"] = [_stage_to_dict(s) for s in self.stages]
        else:
            d["model_ref"] = self.model_ref
        return d


def photometric_provider(src: str, dst: str, gain=1.0, gamma=1.0, vignette_strength=0.0) -> TransferProvider:
    return TransferProvider(src, dst, "photometric_oracle", (PhotometricStage(gain, gamma, vignette_strength),))


def identity_provider(src: str, dst: str) -> TransferProvider:
    return TransferProvider(src, dst, "photometric_oracle", ())


def denoised_inverse(provider: TransferProvider, sigma: float = 0.8) -> TransferProvider:
    """Analytic inverse preceded by a Gaussian prefilter.

    The plain inverse amplifies sensor noise in dark target-domain images by
    an order of magnitude; the prefilter keeps the fake source images clean.
    """
    inv = make_inverse(provider)
    return TransferProvider(inv.src, inv.dst, "photometric_oracle", (SmoothingStage(sigma),) + inv.stages)


def make_inverse(provider: TransferProvider) -> TransferProvider:
    """Analytic inverse of a photometric oracle (stages inverted, order reversed)."""
    if provider.kind != "photometric_oracle":
        raise ProviderError(f"only photometric oracles can be inverted analytically, got {provider.kind}")
    stages = tuple(s.inverse() for s in reversed(provider.stages))
    return TransferProvider(provider.dst, provider.src, "photometric_oracle", stages)


def compose(first: TransferProvider, second: TransferProvider) -> TransferProvider:
    """``second(first(x))`` as one oracle; ``first.dst`` must equal ``second.src``."""
    if first.kind != "photometric_oracle" or second.kind != "photometric_oracle":
        raise ProviderError("only photometric oracles compose")
    if first.dst != second.src:
        raise ConfigError(f"cannot compose {first.name} with {second.name}")
    return TransferProvider(first.src, second.dst, "photometric_oracle", first.stages + second.stages)


def _load_external(model_ref: str) -> Callable:
    if ":" in model_ref and not Path(model_ref).exists():
        module_name, _, attr = model_ref.partition(":")
        try:
            return getattr(importlib.import_module(module_name), attr)
        except (ImportError, AttributeError) as exc:
            raise ProviderError(f"cannot import transfer function {model_ref!r}: {exc}") from exc
    path = Path(model_ref)
    if not path.is_file():
        raise ProviderError(f"transfer model weights not found: {model_ref}")
    try:
        if path.suffix == ".pt2":
            model = torch.export.load(str(path)).module()
        else:
            model = torch.jit.load(str(path), map_location="cpu").eval()
    except Exception as exc:  # torch raises assorted types for bad archives
        raise ProviderError(f"cannot load transfer model {model_ref!r}: {exc}") from exc

    def run(image: np.ndarray) -> np.ndarray:
        x = torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1)[None])).float()
        with torch.no_grad():
            y = model(x)
        return y[0].permute(1, 2, 0).numpy()

    return run


def load_provider(provider: TransferProvider) -> TransferProvider:
    """Resolve an external provider's forward function; oracles pass through."""
    if provider.kind == "photometric_oracle" or provider._fn is not None:
        return provider
    fn = _load_external(provider.model_ref)
    object.__setattr__(provider, "_fn", fn)
    return provider


def transfer(provider: TransferProvider, image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[-1] != 3:
        raise ConfigError(f"expected an (H, W, 3) image, got shape {image.shape}")
    out_dtype = image.dtype if image.dtype.kind == "f" else np.float32
    if provider.kind == "photometric_oracle":
        out = image.astype(np.float64)
        for stage in provider.stages:
            out = stage.apply(out)
        return out.astype(out_dtype)
    fn = load_provider(provider)._fn
    out = np.asarray(fn(image), dtype=np.float64)
    if out.shape != image.shape:
        raise ProviderError(f"{provider.name} returned shape {out.shape} for input {image.shape}")
    return np.clip(np.nan_to_num(out, nan=0.0), 0.0, 1.0).astype(out_dtype)


def transfer_pool(provider: TransferProvider, images) -> np.ndarray:
    return np.stack([transfer(provider, img) for img in images])


# ---------------------------------------------------------------------------
# JSON configs


def _stage_to_dict(stage) -> dict:
    if isinstance(stage, SmoothingStage):
        return {"type": "smooth", "sigma": stage.sigma}
    return {
        "type": "photometric",
        "gain": stage.gain,
        "gamma": stage.gamma,
        "vignette_strength": stage.vignette_strength,
        "inverted": stage.inverted,
    }


def _stage_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("type", "photometric")
    if kind == "smooth":
        return SmoothingStage(**d)
    if kind == "photometric":
        return PhotometricStage(**d)
    raise ConfigError(f"unknown stage type {kind!r}")


def provider_from_dict(d: dict, base: Path | None = None) -> TransferProvider:
    kind = d.get("kind", "photometric_oracle")
    if kind == "photometric_oracle":
        params = d.get("params", [])
        if isinstance(params, dict):
            params = [params]
        stages = tuple(_stage_from_dict(p) for p in params)
        return TransferProvider(d["src"], d["dst"], kind, stages)
    ref = d["model_ref"]
    if base is not None and ":" not in ref and not Path(ref).is_absolute():
        ref = str(base / ref)
    return TransferProvider(d["src"], d["dst"], kind, model_ref=ref)


class ProviderRegistry:
    """Named transfer providers read from a JSON registry file.

    File layout: ``{"providers": [{src, dst, kind, params | model_ref}, ...]}``.
    Providers are addressed by ``(src, dst)``.
    """

    def __init__(self, providers=()):
        self._providers: dict[tuple[str, str], TransferProvider] = {}
        for p in providers:
            self.add(p)

    def add(self, provider: TransferProvider) -> None:
        self._providers[(provider.src, provider.dst)] = provider

    def get(self, src: str, dst: str) -> TransferProvider:
        try:
            return self._providers[(src, dst)]
        except KeyError:
            known = sorted(f"{s}->{d}" for s, d in self._providers)
            raise ProviderError(f"no provider {src}->{dst}; available: {known}") from None

    def pair(self, src: str, dst: str) -> tuple[TransferProvider, TransferProvider]:
        return self.get(src, dst), self.get(dst, src)

    def __len__(self):
        return len(self._providers)

    def save(self, path: str | Path) -> None:
        payload = {"providers": [p.to_dict() for p in self._providers.values()]}
        Path(path).write_text(json.dumps(payload, indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ProviderRegistry":
        path = Path(path)
        payload = json.loads(path.read_text())
        return cls(provider_from_dict(d, path.parent) for d in payload["providers"])

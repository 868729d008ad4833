import json
import sys

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from depthadapt.errors import ConfigError, ProviderError
from depthadapt.transfer import (
    PhotometricStage,
    ProviderRegistry,
    TransferProvider,
    compose,
    denoised_inverse,
    identity_provider,
    make_inverse,
    photometric_provider,
    transfer,
    transfer_pool,
)


def test_constant_night_value():
    p = photometric_provider("day", "night", gain=0.3, gamma=1.8)
    out = transfer(p, np.full((8, 8, 3), 0.5))
    expected = (0.3 * 0.5) ** 1.8
    assert expected == pytest.approx(0.032882, abs=1e-6)
    assert np.allclose(out, expected, rtol=0, atol=1e-12)


def test_round_trip_100_images():
    rng = np.random.default_rng(0)
    p = photometric_provider("day", "night", gain=0.8, gamma=1.8, vignette_strength=0.5)
    q = make_inverse(p)
    worst = 0.0
    for _ in range(100):
        img = rng.uniform(0.05, 0.95, (16, 16, 3))
        worst = max(worst, np.abs(transfer(q, transfer(p, img)) - img).max())
    assert worst < 1e-5


def test_inverse_of_identity():
    ident = identity_provider("day", "night")
    inv = make_inverse(ident)
    assert (inv.src, inv.dst) == ("night", "day")
    img = np.random.default_rng(1).random((4, 4, 3))
    assert np.array_equal(transfer(inv, img), img)


def test_inverse_parameters():
    inv = make_inverse(photometric_provider("a", "b", gain=2.0, gamma=0.5))
    (stage,) = inv.stages
    assert stage.gain == 0.5 and stage.gamma == 2.0 and stage.inverted
    # inverted order: undo gamma first, then gain
    v = np.full((2, 2, 3), 0.36)
    assert np.allclose(transfer(inv, v), (0.36**2.0) * 0.5)


def test_full_vignette_not_invertible():
    with pytest.raises(ProviderError, match="inverted"):
        make_inverse(photometric_provider("a", "b", vignette_strength=1.0))


def test_external_missing_weights(tmp_path):
    p = TransferProvider("day", "night", "external", model_ref=str(tmp_path / "absent.pt"))
    with pytest.raises(ProviderError, match="absent.pt"):
        transfer(p, np.zeros((4, 4, 3)))


def test_external_module_function(tmp_path, monkeypatch):
    (tmp_path / "gen_mod.py").write_text("def run(img):\n    return img * 0.5 + 0.8\n")
    monkeypatch.syspath_prepend(str(tmp_path))
    p = TransferProvider("day", "night", "external", model_ref="gen_mod:run")
    out = transfer(p, np.full((4, 4, 3), 0.6, np.float32))
    assert out.dtype == np.float32 and np.all(out == 1.0)  # clipped
    sys.modules.pop("gen_mod", None)


@pytest.mark.filterwarnings("ignore::DeprecationWarning")
def test_external_torchscript(tmp_path):
    class Half(torch.nn.Module):
        def forward(self, x):
            return x * 0.5

    torch.jit.script(Half()).save(str(tmp_path / "g.pt"))
    p = TransferProvider("day", "night", "external", model_ref=str(tmp_path / "g.pt"))
    out = transfer(p, np.full((4, 6, 3), 0.4))
    assert out.shape == (4, 6, 3) and np.allclose(out, 0.2)


def test_external_exported_program(tmp_path):
    class Gain(torch.nn.Module):
        def forward(self, x):
            return x * 0.25

    prog = torch.export.export(Gain(), (torch.rand(1, 3, 4, 4),))
    torch.export.save(prog, str(tmp_path / "g.pt2"))
    p = TransferProvider("day", "night", "external", model_ref=str(tmp_path / "g.pt2"))
    assert np.allclose(transfer(p, np.full((4, 4, 3), 0.8)), 0.2)


def test_external_wrong_shape(tmp_path, monkeypatch):
    (tmp_path / "bad_mod.py").write_text("def run(img):\n    return img[:2]\n")
    monkeypatch.syspath_prepend(str(tmp_path))
    p = TransferProvider("day", "night", "external", model_ref="bad_mod:run")
    with pytest.raises(ProviderError, match="shape"):
        transfer(p, np.zeros((4, 4, 3)))
    sys.modules.pop("bad_mod", None)


def test_rejects_non_image():
    with pytest.raises(ConfigError):
        transfer(identity_provider("a", "b"), np.zeros((4, 4)))


@given(
    gain=st.floats(0.1, 3.0),
    gamma=st.floats(0.3, 3.0),
    vig=st.floats(0.0, 0.99),
    seed=st.integers(0, 1000),
)
def test_range_shape_purity(gain, gamma, vig, seed):
    p = photometric_provider("a", "b", gain, gamma, vig)
    img = np.random.default_rng(seed).random((8, 12, 3))
    out = transfer(p, img)
    assert out.shape == img.shape
    assert out.min() >= 0 and out.max() <= 1
    assert np.array_equal(out, transfer(p, img))


def test_compose_and_denoise():
    d2n = photometric_provider("day", "night", 0.3, 1.8, 0.5)
    d2r = photometric_provider("day", "rain", 0.5, 1.3, 0.2)
    n2r = compose(make_inverse(d2n), d2r)
    assert (n2r.src, n2r.dst) == ("night", "rain")
    img = np.random.default_rng(2).uniform(0.2, 0.9, (8, 8, 3))
    assert np.allclose(transfer(n2r, transfer(d2n, img)), transfer(d2r, img), atol=1e-5)
    with pytest.raises(ConfigError):
        compose(d2n, d2r)

    clean = denoised_inverse(d2n, sigma=0.8)
    noisy = transfer(d2n, img) + np.random.default_rng(3).normal(0, 0.02, img.shape)
    err_plain = np.abs(transfer(make_inverse(d2n), np.clip(noisy, 0, 1)) - img).mean()
    err_clean = np.abs(transfer(clean, np.clip(noisy, 0, 1)) - img).mean()
    assert err_clean < err_plain


def test_registry_json_roundtrip(tmp_path):
    d2n = photometric_provider("day", "night", 0.3, 1.8, 0.5)
    ext = TransferProvider("day", "rain", "external", model_ref="models/g.pt")
    reg = ProviderRegistry([d2n, denoised_inverse(d2n), ext])
    reg.save(tmp_path / "providers.json")
    payload = json.loads((tmp_path / "providers.json").read_text())
    assert {tuple(sorted(p)) for p in payload["providers"]} >= {("dst", "kind", "params", "src")}
    back = ProviderRegistry.load(tmp_path / "providers.json")
    fwd, bwd = back.pair("day", "night")
    img = np.random.default_rng(4).random((8, 8, 3))
    assert np.array_equal(transfer(fwd, img), transfer(d2n, img))
    assert np.array_equal(transfer(bwd, img), transfer(denoised_inverse(d2n), img))
    assert back.get("day", "rain").model_ref == str(tmp_path / "models/g.pt")
    with pytest.raises(ProviderError, match="day->night"):
        back.get("night", "snow")


def test_pool():
    p = photometric_provider("a", "b", 0.5)
    assert transfer_pool(p, np.ones((3, 4, 4, 3))).shape == (3, 4, 4, 3)


def test_stage_validation():
    with pytest.raises(ConfigError):
        PhotometricStage(gain=-1)

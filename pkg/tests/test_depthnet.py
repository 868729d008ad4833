import json

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st
from safetensors.torch import save_file

from depthadapt.depthnet import (
    ArchDescriptor,
    Checkpoint,
    decode,
    disparity_to_depth,
    encode,
    import_external,
    load_checkpoint,
    new_checkpoints,
    predict,
    save_checkpoint,
)
from depthadapt.errors import ConfigError, PairingError, ShapeError


@pytest.fixture(scope="module")
def default_pair():
    return new_checkpoints(ArchDescriptor(), seed=0)


def test_default_pyramid_shapes(default_pair):
    enc, _ = default_pair
    feats = encode(enc, np.zeros((256, 512, 3), np.float32))
    assert len(feats) == 5
    assert feats[0].shape[-2:] == (128, 256)
    for k in range(1, 5):
        assert feats[k].shape[-1] * 2 == feats[k - 1].shape[-1]
        assert feats[k].shape[-2] * 2 == feats[k - 1].shape[-2]
    assert [f.shape[1] for f in feats] == list(enc.arch.encoder_level_channels)


def test_decoder_scales(default_pair, rng):
    enc, dec = default_pair
    outs = decode(dec, encode(enc, rng.random((64, 128, 3))))
    assert [o.shape[-2:] for o in outs] == [(64, 128), (32, 64), (16, 32), (8, 16)]
    for o in outs:
        assert o.min() > 0 and o.max() < 1


def test_encode_deterministic(tiny_pair, rng):
    enc, _ = tiny_pair
    img = rng.random((16, 16, 3))
    a, b = encode(enc, img), encode(enc, img)
    assert all(torch.equal(x, y) for x, y in zip(a, b))


def test_encoder_not_degenerate(tiny_pair):
    enc, _ = tiny_pair
    zeros = encode(enc, np.zeros((16, 16, 3)))
    ones = encode(enc, np.ones((16, 16, 3)))
    assert not torch.allclose(zeros[-1], ones[-1])


def test_shape_error_names_dimension(tiny_pair):
    enc, _ = tiny_pair
    with pytest.raises(ShapeError, match="width"):
        encode(enc, np.zeros((16, 20, 3)))
    with pytest.raises(ShapeError, match="height"):
        encode(enc, np.zeros((12, 16, 3)))


def test_any_multiple_size_works(tiny_pair):
    enc, dec = tiny_pair
    assert predict(enc, dec, np.zeros((8, 24, 3))).shape == (8, 24)


def test_predict_is_staged_pipeline(tiny_pair, rng):
    enc, dec = tiny_pair
    img = rng.random((16, 16, 3)).astype(np.float32)
    staged = disparity_to_depth(decode(dec, encode(enc, img))[0][0, 0]).numpy()
    assert np.array_equal(predict(enc, dec, img), staged)


def test_batch_predict(tiny_pair, rng):
    enc, dec = tiny_pair
    imgs = rng.random((3, 16, 16, 3)).astype(np.float32)
    out = predict(enc, dec, imgs)
    assert out.shape == (3, 16, 16)
    assert np.allclose(out[1], predict(enc, dec, imgs[1]), rtol=1e-5)


def test_night_encoder_pairs_with_day_decoder(tiny_arch, tiny_pair, recwarn):
    night_enc, _ = new_checkpoints(tiny_arch, seed=9, domain="night")
    _, day_dec = tiny_pair
    predict(night_enc, day_dec, np.zeros((16, 16, 3)))
    assert len(recwarn) == 0


def test_descriptor_mismatch(tiny_pair):
    enc, _ = tiny_pair
    _, other_dec = new_checkpoints(ArchDescriptor((4, 6, 10), 2, (16, 16)))
    with pytest.raises(PairingError):
        predict(enc, other_dec, np.zeros((16, 16, 3)))
    with pytest.raises(PairingError):
        decode(other_dec, encode(enc, np.zeros((16, 16, 3))))


def test_disparity_worked_example():
    assert float(disparity_to_depth(0.5, 0.1, 100.0)) == pytest.approx(1 / (0.01 + 0.5 * 9.99), abs=1e-12)
    assert float(disparity_to_depth(0.5, 0.1, 100.0)) == pytest.approx(0.19980, abs=1e-5)


def test_disparity_endpoints():
    assert disparity_to_depth(1.0, 0.1, 100.0) == pytest.approx(0.1)
    assert disparity_to_depth(0.0, 0.1, 100.0) == pytest.approx(100.0)
    with pytest.raises(ConfigError):
        disparity_to_depth(0.5, 2.0, 1.0)


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_disparity_monotone(a, b):
    da, db = disparity_to_depth(a), disparity_to_depth(b)
    if a > b:
        assert da <= db  # equal only when the gap is below float resolution
        if a - b > 1e-9:
            assert da < db
    assert 0.1 - 1e-12 <= da <= 100.0 + 1e-9


def test_checkpoint_roundtrip_bytes(tmp_path, tiny_pair, rng):
    enc, dec = tiny_pair
    save_checkpoint(enc, tmp_path / "a")
    loaded = load_checkpoint(tmp_path / "a")
    save_checkpoint(loaded, tmp_path / "b")
    assert (tmp_path / "a" / "weights.safetensors").read_bytes() == (tmp_path / "b" / "weights.safetensors").read_bytes()
    assert loaded.id == enc.id and loaded.arch == enc.arch
    img = rng.random((16, 16, 3))
    assert np.array_equal(predict(loaded, dec, img), predict(enc, dec, img))


def test_hash_is_checked(tmp_path, tiny_pair):
    enc, _ = tiny_pair
    save_checkpoint(enc, tmp_path / "a")
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    manifest["content_hash"] = "0" * 64
    (tmp_path / "a" / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(ConfigError, match="hash"):
        load_checkpoint(tmp_path / "a")


def test_non_finite_rejected(tiny_pair):
    enc, _ = tiny_pair
    state = {k: v.clone() for k, v in enc.state.items()}
    next(iter(state.values())).view(-1)[0] = float("nan")
    with pytest.raises(ConfigError, match="non-finite"):
        Checkpoint("encoder", "day", enc.arch, state)


def test_manifest_fields(tiny_pair):
    enc, _ = tiny_pair
    m = enc.manifest()
    assert set(m) >= {"role", "domain", "arch", "parent", "content_hash"}
    assert ArchDescriptor.from_dict(m["arch"]) == enc.arch


def test_import_external(tmp_path, tiny_pair):
    enc, _ = tiny_pair
    renamed = {f"backbone.{k}": v for k, v in enc.state.items()}
    save_file(renamed, tmp_path / "ext.safetensors")
    spec = {
        "role": "encoder",
        "domain": "day",
        "arch": enc.arch.to_dict(),
        "weights": "ext.safetensors",
        "key_map": {f"backbone.{k}": k for k in enc.state},
    }
    (tmp_path / "conv.json").write_text(json.dumps(spec))
    assert import_external(tmp_path / "conv.json").id == enc.id

    spec["key_map"] = {}
    (tmp_path / "conv.json").write_text(json.dumps(spec))
    with pytest.raises(PairingError, match="missing"):
        import_external(tmp_path / "conv.json")


def test_import_external_torch_file(tmp_path, tiny_pair):
    _, dec = tiny_pair
    torch.save(dec.state, tmp_path / "dec.pt")
    spec = {"role": "decoder", "domain": "day", "arch": dec.arch.to_dict(), "weights": "dec.pt"}
    (tmp_path / "conv.json").write_text(json.dumps(spec))
    assert import_external(tmp_path / "conv.json").id == dec.id


def test_arch_validation():
    with pytest.raises(ConfigError):
        ArchDescriptor((4, 8), decoder_output_scales=3)

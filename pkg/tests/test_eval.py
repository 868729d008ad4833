import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from depthadapt.data import write_benchmark, load_dataset
from depthadapt.depthnet import predict
from depthadapt.errors import EvaluationError
from depthadapt.evaluation import (
    METRIC_NAMES,
    aggregate,
    compute_metrics,
    evaluate_arrays,
    evaluate_model,
    format_table,
    pooled_metrics,
)
from helpers import loop_metrics


def test_worked_example():
    r = compute_metrics(np.array([2.0, 8.0]), np.array([1.0, 10.0]), cap=40, scaling="none")
    assert r.abs_rel == pytest.approx(0.6)
    assert r.delta1 == 0.0  # ratio 1.25 is not strictly below 1.25
    assert r.delta2 == 0.5
    assert r.n_pixels == 2


def test_perfect_prediction(rng):
    gt = rng.uniform(1, 30, (10, 10))
    for scaling in ("none", "median"):
        r = compute_metrics(gt, gt, 40, scaling)
        assert r.abs_rel == pytest.approx(0, abs=1e-12) and r.rmse == pytest.approx(0, abs=1e-12)
        assert (r.delta1, r.delta2, r.delta3) == (1.0, 1.0, 1.0)


@given(st.floats(0.01, 100.0))
def test_median_scale_invariance(c):
    rng = np.random.default_rng(0)
    gt = rng.uniform(1, 30, 50)
    pred = gt * rng.uniform(0.7, 1.4, 50)
    a = compute_metrics(pred, gt, 40, "median")
    b = compute_metrics(pred * c, gt, 40, "median")
    for k in METRIC_NAMES:
        assert getattr(a, k) == pytest.approx(getattr(b, k), rel=1e-9, abs=1e-12)
    assert compute_metrics(gt * c, gt, 40, "median").abs_rel == pytest.approx(0, abs=1e-9)


def test_cap_masking():
    gt = np.array([5.0, 30.0, 50.0, 0.0])
    pred = np.array([5.0, 30.0, 1.0, 7.0])
    r = compute_metrics(pred, gt, cap=40, scaling="none")
    assert r.n_pixels == 2 and r.abs_rel == 0
    assert compute_metrics(pred, gt, cap=60, scaling="none").n_pixels == 3


def test_clamp_after_scaling():
    r = compute_metrics(np.array([0.0, 100.0]), np.array([10.0, 20.0]), cap=40, scaling="none")
    # 0 -> 0.1, 100 -> 40
    assert r.abs_rel == pytest.approx(((10 - 0.1) / 10 + 20 / 20) / 2)


def test_no_valid_pixels():
    with pytest.raises(EvaluationError):
        compute_metrics(np.ones(3), np.array([0.0, 50.0, 70.0]), cap=40)
    with pytest.raises(EvaluationError):
        compute_metrics(np.ones(3), np.ones(4))
    with pytest.raises(EvaluationError):
        compute_metrics(np.ones(3), np.ones(3), scaling="mean")


@pytest.mark.parametrize("scaling", ["none", "median"])
@pytest.mark.parametrize("cap", [40, 60])
def test_loop_oracle(scaling, cap):
    rng = np.random.default_rng(cap)
    for _ in range(20):
        gt = rng.uniform(0.5, 80, 64)
        gt[rng.random(64) < 0.1] = 0
        pred = rng.uniform(0.05, 90, 64)
        got = compute_metrics(pred, gt, cap, scaling).metrics()
        ref = loop_metrics(pred, gt, cap, scaling)
        for k in METRIC_NAMES:
            assert got[k] == pytest.approx(ref[k], abs=1e-6)


@given(st.integers(0, 10_000))
def test_report_invariants_and_permutation(seed):
    rng = np.random.default_rng(seed)
    gt = rng.uniform(0.5, 60, 30)
    pred = rng.uniform(0.1, 70, 30)
    r = compute_metrics(pred, gt, 40, "median")
    assert 0 <= r.delta1 <= r.delta2 <= r.delta3 <= 1
    assert min(r.abs_rel, r.sq_rel, r.rmse, r.rmse_log) >= 0
    perm = rng.permutation(30)
    s = compute_metrics(pred[perm], gt[perm], 40, "median")
    for k in METRIC_NAMES:
        assert getattr(r, k) == pytest.approx(getattr(s, k), rel=1e-12, abs=1e-15)


def test_aggregate_vs_pooled():
    p1, g1 = np.array([2.0, 2.0]), np.array([1.0, 1.0])
    p2, g2 = np.array([3.0, 3.0, 3.0, 3.0]), np.array([3.0, 3.0, 3.0, 3.0])
    per_image = aggregate([compute_metrics(p1, g1, 40, "none"), compute_metrics(p2, g2, 40, "none")])
    pooled = pooled_metrics([p1, p2], [g1, g2], 40, "none")
    assert per_image.abs_rel == pytest.approx(0.5)
    assert pooled.abs_rel == pytest.approx(2 / 6)
    assert per_image.n_pixels == pooled.n_pixels == 6


def test_evaluate_model_fanout(tmp_path, tiny_pair):
    enc, dec = tiny_pair
    m = write_benchmark(tmp_path, 0, 3, seed=0, image_size=(32, 32))
    recs = load_dataset(tmp_path, m)
    reports = evaluate_model(enc, dec, recs, caps=[40, 60])
    assert set(reports) == {40, 60}
    assert reports[40].cap == 40 and reports[40].scaling == "median"
    from depthadapt.data import load_sample

    samples = [load_sample(r) for r in recs]
    arrays = evaluate_arrays(enc, dec, np.stack([s[0] for s in samples]), np.stack([s[1] for s in samples]), [40, 60])
    for cap in (40, 60):
        assert arrays[cap].abs_rel == pytest.approx(reports[cap].abs_rel, rel=1e-5)
    pooled = evaluate_model(enc, dec, recs, caps=[40], scaling="none", pooled=True)
    assert pooled[40].scaling == "none"


def test_evaluate_model_names_record(tmp_path, tiny_pair):
    from PIL import Image

    enc, dec = tiny_pair
    m = write_benchmark(tmp_path, 0, 2, seed=0, image_size=(32, 32))
    recs = load_dataset(tmp_path, m)
    Image.fromarray(np.full((32, 32), 90 * 256, np.uint16)).save(recs[1].depth_path)  # all beyond the cap
    with pytest.raises(EvaluationError, match=recs[1].image_path.name):
        evaluate_model(enc, dec, recs, caps=[40])


def test_table_formats():
    r = compute_metrics(np.array([2.0, 8.0]), np.array([1.0, 10.0]), 40, "none")
    md = format_table([("ours", r)])
    header = md.splitlines()[0]
    cols = ["Abs Rel", "Sq Rel", "RMSE", "RMSE log", "δ<1.25"]
    assert all(header.index(a) < header.index(b) for a, b in zip(cols, cols[1:]))
    assert "| ours | 40 | none | 0.6000" in md
    lines = format_table([("ours", r)], "csv").splitlines()
    assert lines[0] == "method,cap,scaling,abs_rel,sq_rel,rmse,rmse_log,delta1,delta2,delta3"
    assert lines[1].startswith("ours,40.0,none,0.6000")

"""Depth error and accuracy metrics at a depth cap, with optional median scaling."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .data import SampleRecord, load_sample
from .depthnet import MIN_DEPTH, Checkpoint, predict
from .errors import EvaluationError

METRIC_NAMES = ("abs_rel", "sq_rel", "rmse", "rmse_log", "delta1", "delta2", "delta3")
COLUMN_TITLES = ("Abs Rel", "Sq Rel", "RMSE", "RMSE log", "δ<1.25", "δ<1.25²", "δ<1.25³")


@dataclass(frozen=True)
class EvalReport:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta1: float
    delta2: float
    delta3: float
    cap: float
    scaling: str
    n_pixels: int

    def metrics(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in METRIC_NAMES}

    def as_dict(self) -> dict:
        return asdict(self)


def _check_scaling(scaling: str) -> str:
    if scaling not in ("none", "median"):
        raise EvaluationError(f"scaling must be 'none' or 'median', got {scaling!r}")
    return scaling


def compute_metrics(
    pred: np.ndarray,
    gt: np.ndarray,
    cap: float = 40.0,
    scaling: str = "median",
    min_depth: float = MIN_DEPTH,
) -> EvalReport:
    """Metrics over pixels with ``0 < gt <= cap``.

    With ``scaling="median"`` the prediction is multiplied by
    ``median(gt) / median(pred)`` over valid pixels; it is then clamped to
    ``[min_depth, cap]``. Delta thresholds use strict ``<``.
    """
    _check_scaling(scaling)
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise EvaluationError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
    valid = (gt > 0) & (gt <= cap)
    if not valid.any():
        raise EvaluationError(f"no valid ground-truth pixels at cap {cap}")
    g = gt[valid]
    p = pred[valid]
    if scaling == "median":
        p = p * (np.median(g) / np.median(p))
    p = np.clip(p, min_depth, cap)

    thresh = np.maximum(p / g, g / p)
    diff = p - g
    return EvalReport(
        abs_rel=float(np.mean(np.abs(diff) / g)),
        sq_rel=float(np.mean(diff**2 / g)),
        rmse=float(np.sqrt(np.mean(diff**2))),
        rmse_log=float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2))),
        delta1=float(np.mean(thresh < 1.25)),
        delta2=float(np.mean(thresh < 1.25**2)),
        delta3=float(np.mean(thresh < 1.25**3)),
        cap=float(cap),
        scaling=scaling,
        n_pixels=int(valid.sum()),
    )


def aggregate(reports: Sequence[EvalReport]) -> EvalReport:
    """Average per-image metrics; ``n_pixels`` is the total."""
    if not reports:
        raise EvaluationError("nothing to aggregate")
    first = reports[0]
    means = {k: float(np.mean([getattr(r, k) for r in reports])) for k in METRIC_NAMES}
    return EvalReport(**means, cap=first.cap, scaling=first.scaling, n_pixels=sum(r.n_pixels for r in reports))


def pooled_metrics(preds, gts, cap=40.0, scaling="median", min_depth=MIN_DEPTH) -> EvalReport:
    """Metrics over all pixels of all images at once (the alternative to :func:`aggregate`).

    Median scaling is still applied per image.
    """
    ps, gs = [], []
    for p, g in zip(preds, gts):
        valid = (np.asarray(g) > 0) & (np.asarray(g) <= cap)
        if not valid.any():
            continue
        pv, gv = np.asarray(p, dtype=np.float64)[valid], np.asarray(g, dtype=np.float64)[valid]
        if scaling == "median":
            pv = pv * (np.median(gv) / np.median(pv))
        ps.append(pv)
        gs.append(gv)
    if not ps:
        raise EvaluationError(f"no valid ground-truth pixels at cap {cap}")
    report = compute_metrics(np.concatenate(ps), np.concatenate(gs), cap, "none", min_depth)
    return replace(report, scaling=scaling)


def evaluate_arrays(
    enc: Checkpoint,
    dec: Checkpoint,
    images: np.ndarray,
    depths: np.ndarray,
    caps: Iterable[float] = (40.0, 60.0),
    scaling: str = "median",
    batch_size: int = 50,
    pooled: bool = False,
) -> dict[float, EvalReport]:
    _check_scaling(scaling)
    images = np.asarray(images, dtype=np.float32)
    preds = np.concatenate(
        [predict(enc, dec, images[i : i + batch_size]) for i in range(0, len(images), batch_size)]
    )
    out = {}
    for cap in caps:
        if pooled:
            out[cap] = pooled_metrics(preds, depths, cap, scaling)
        else:
            out[cap] = aggregate([compute_metrics(p, g, cap, scaling) for p, g in zip(preds, depths)])
    return out


def evaluate_model(
    enc: Checkpoint,
    dec: Checkpoint,
    test: Sequence[SampleRecord],
    caps: Iterable[float] = (40.0, 60.0),
    scaling: str = "median",
    pooled: bool = False,
) -> dict[float, EvalReport]:
    """Evaluate on on-disk test records; errors name the offending record."""
    _check_scaling(scaling)
    caps = list(caps)
    per_cap: dict[float, list[EvalReport]] = {c: [] for c in caps}
    preds, gts = [], []
    for record in test:
        image, gt = load_sample(record)
        if gt is None:
            raise EvaluationError(f"{record.image_path}: test record has no ground truth")
        pred = predict(enc, dec, image)
        preds.append(pred)
        gts.append(gt)
        if pooled:
            continue
        for cap in caps:
            try:
                per_cap[cap].append(compute_metrics(pred, gt, cap, scaling))
            except EvaluationError as exc:
                raise EvaluationError(f"{record.image_path}: {exc}") from exc
    if pooled:
        return {cap: pooled_metrics(preds, gts, cap, scaling) for cap in caps}
    return {cap: aggregate(per_cap[cap]) for cap in caps}


def format_table(rows: Sequence[tuple[str, EvalReport]], fmt: str = "markdown") -> str:
    """Render reports in the usual column order; one row per ``(label, report)``."""
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["method", "cap", "scaling", *METRIC_NAMES])
        for label, r in rows:
            writer.writerow([label, r.cap, r.scaling, *(f"{v:.4f}" for v in r.metrics().values())])
        return buf.getvalue()
    if fmt != "markdown":
        raise ValueError(f"unknown table format {fmt!r}")
    lines = [
        "| Method | Depth cap (m) | Scaling | " + " | ".join(COLUMN_TITLES) + " |",
        "|" + "---|" * (3 + len(COLUMN_TITLES)),
    ]
    for label, r in rows:
        vals = " | ".join(f"{v:.4f}" for v in r.metrics().values())
        lines.append(f"| {label} | {r.cap:g} | {r.scaling} | {vals} |")
    return "\n".join(lines) + "\n"

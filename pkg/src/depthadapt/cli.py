"""Command line entry point: ``python -m depthadapt <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import data
from .depthnet import import_external, load_checkpoint, save_checkpoint
from .errors import DepthAdaptError
from .evaluation import evaluate_model, format_table
from .pretrain import PretrainConfig, pretrain_day
from .runtime import EncoderRegistry, export_depth
from .trainer import AdaptConfig, adapt, load_config
from .transfer import ProviderRegistry, denoised_inverse, photometric_provider

logger = logging.getLogger("depthadapt")

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}


def _size(text: str) -> tuple[int, int]:
    h, w = text.lower().split("x")
    return int(h), int(w)


def _shift(text: str) -> data.ShiftParams:
    parts = [float(v) for v in text.split(",")]
    if len(parts) == 5:
        parts[4] = int(parts[4])
    return data.ShiftParams(*parts)


def cmd_make_benchmark(args):
    shift = _shift(args.shift) if args.shift else None
    manifest = data.write_benchmark(
        args.out, args.train, args.test, seed=args.seed, shift=shift, domain=args.domain, image_size=_size(args.size)
    )
    if shift is not None:
        fwd = photometric_provider("day", args.domain, shift.gain, shift.gamma, shift.vignette_strength)
        registry = ProviderRegistry([fwd, denoised_inverse(fwd, args.denoise_sigma)])
        registry.save(Path(args.out) / "providers.json")
    print(manifest)


def _pairs(records):
    images, depths = [], []
    for r in records:
        img, dep = data.load_sample(r)
        if dep is None:
            continue
        images.append(img)
        depths.append(dep)
    if not images:
        raise SystemExit("no records with ground truth found for pre-training")
    return np.stack(images), np.stack(depths)


def cmd_pretrain(args):
    cfg = load_config(args.config, PretrainConfig) if args.config else PretrainConfig()
    if args.epochs:
        cfg = replace(cfg, epochs=args.epochs)
    records = [r for r in data.load_dataset(args.root, args.manifest) if r.split == "train"]
    images, depths = _pairs(records)
    if tuple(cfg.arch.input_size) != images.shape[1:3]:
        cfg = replace(cfg, arch=replace(cfg.arch, input_size=images.shape[1:3]))
    enc, dec = pretrain_day(images, depths, cfg, on_epoch=lambda e, l: logger.info("epoch %d loss %.4f", e, l))
    out = Path(args.out)
    save_checkpoint(enc, out / "encoder-day")
    save_checkpoint(dec, out / "decoder")
    print(out)


def cmd_adapt(args):
    cfg = load_config(args.config) if args.config else AdaptConfig()
    overrides = {}
    if args.epochs:
        overrides["epochs"] = args.epochs
    if args.paper_exact_smoothness:
        overrides["paper_exact_smoothness"] = True
    cfg = replace(cfg, **overrides)
    src, dst = args.pair.split(":")
    fwd, bwd = ProviderRegistry.load(args.providers).pair(src, dst)
    source = load_checkpoint(args.source_encoder)
    decoder = load_checkpoint(args.decoder)
    src_records = [r for r in data.load_dataset(args.src_root or ".", args.src_manifest) if r.split == "train"]
    x_records = [r for r in data.load_dataset(args.x_root or ".", args.x_manifest) if r.split == "train"]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    enc = adapt(
        source,
        decoder,
        fwd,
        bwd,
        data.load_images(src_records),
        data.load_images(x_records),
        cfg,
        log_path=out / "loss_log.csv",
    )
    save_checkpoint(enc, out / f"encoder-{dst}")
    (out / "adapt_config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    print(out / f"encoder-{dst}")


def cmd_evaluate(args):
    enc = load_checkpoint(args.encoder)
    dec = load_checkpoint(args.decoder)
    records = [r for r in data.load_dataset(args.root, args.manifest) if r.split == "test"]
    scaling = "none" if args.no_median_scaling else "median"
    reports = evaluate_model(enc, dec, records, args.caps, scaling, pooled=args.pooled)
    label = args.label or f"{enc.domain} encoder"
    table = format_table([(label, r) for r in reports.values()], args.format)
    if args.output:
        Path(args.output).write_text(table)
    print(table, end="")


def cmd_register(args):
    reg_dir = Path(args.registry)
    if args.decoder:
        registry = EncoderRegistry(load_checkpoint(args.decoder))
    else:
        registry = EncoderRegistry.load(reg_dir)
    registry = registry.register(args.domain, load_checkpoint(args.encoder))
    registry.save(reg_dir)
    print(", ".join(registry.tags))


def cmd_infer(args):
    registry = EncoderRegistry.load(args.registry)
    inp = Path(args.input)
    paths = sorted(p for p in inp.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES) if inp.is_dir() else [inp]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for p in paths:
        depth = registry.infer(args.domain, data.read_image(p))
        target = out / f"{p.stem}_depth.png"
        export_depth(depth, target, args.format)
        print(target)


def cmd_import(args):
    ckpt = import_external(args.conversion_manifest)
    save_checkpoint(ckpt, args.out)
    print(args.out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="depthadapt", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-benchmark", help="render a synthetic benchmark to disk")
    p.add_argument("--out", required=True)
    p.add_argument("--train", type=int, default=500)
    p.add_argument("--test", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", default="64x64", help="HxW")
    p.add_argument("--domain", default="day")
    p.add_argument("--shift", help="gain,gamma,vignette,noise[,blobs]")
    p.add_argument("--denoise-sigma", type=float, default=0.8)
    p.set_defaults(func=cmd_make_benchmark)

    p = sub.add_parser("pretrain", help="supervised day-time pre-training")
    p.add_argument("--root", default=".")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config")
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("adapt", help="adapt an encoder to a new domain")
    p.add_argument("--source-encoder", required=True)
    p.add_argument("--decoder", required=True)
    p.add_argument("--providers", required=True, help="provider registry JSON")
    p.add_argument("--pair", required=True, help="src:dst, e.g. day:night")
    p.add_argument("--src-manifest", required=True)
    p.add_argument("--src-root")
    p.add_argument("--x-manifest", required=True)
    p.add_argument("--x-root")
    p.add_argument("--config", help="YAML/JSON AdaptConfig")
    p.add_argument("--epochs", type=int)
    p.add_argument("--paper-exact-smoothness", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("evaluate", help="evaluate an encoder/decoder pair on test records")
    p.add_argument("--encoder", required=True)
    p.add_argument("--decoder", required=True)
    p.add_argument("--root", default=".")
    p.add_argument("--manifest", required=True)
    p.add_argument("--caps", type=float, nargs="+", default=[40.0, 60.0])
    p.add_argument("--no-median-scaling", action="store_true")
    p.add_argument("--pooled", action="store_true", help="pool pixels instead of averaging per image")
    p.add_argument("--format", choices=["markdown", "csv"], default="markdown")
    p.add_argument("--label")
    p.add_argument("--output")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("register", help="add an encoder to a registry directory")
    p.add_argument("--registry", required=True)
    p.add_argument("--domain", required=True)
    p.add_argument("--encoder", required=True)
    p.add_argument("--decoder", help="create the registry around this decoder")
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("infer", help="predict depth with a registry encoder")
    p.add_argument("--registry", required=True)
    p.add_argument("--domain", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=["png16", "colorized"], default="png16")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("import-checkpoint", help="convert external weights via a conversion manifest")
    p.add_argument("--conversion-manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_import)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except DepthAdaptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

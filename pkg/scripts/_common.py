"""Argument and table helpers shared by the experiment scripts."""

import argparse
import logging
from dataclasses import replace

from depthadapt.evaluation import format_table
from depthadapt.experiments import Benchmark, Runner


def base_parser(description):
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--scenes", type=int, default=500, help="training scenes per domain")
    p.add_argument("--test-scenes", type=int, default=100)
    p.add_argument("--bench-seed", type=int, default=0)
    p.add_argument("--pretrain-epochs", type=int)
    p.add_argument("--epochs", type=int, help="adaptation epochs")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--paper-exact-smoothness", action="store_true")
    p.add_argument("--format", choices=["markdown", "csv"], default="markdown")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def make_runner(args) -> Runner:
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    r = Runner(Benchmark(num_train=args.scenes, num_test=args.test_scenes, seed=args.bench_seed))
    if args.pretrain_epochs:
        r.pretrain_cfg = replace(r.pretrain_cfg, epochs=args.pretrain_epochs)
    over = {"epochs": args.epochs, "batch_size": args.batch_size, "learning_rate": args.lr}
    r.adapt_cfg = replace(r.adapt_cfg, **{k: v for k, v in over.items() if v is not None})
    if args.paper_exact_smoothness:
        r.adapt_cfg = replace(r.adapt_cfg, paper_exact_smoothness=True)
    return r


def print_tables(runner, rows, fmt):
    """``rows`` is a list of ``(label, encoder, test images)``; one table per scaling mode."""
    for scaling in ("median", "none"):
        table = []
        for label, enc, images in rows:
            for report in runner.evaluate(enc, images, (40.0, 60.0), scaling).values():
                table.append((label, report))
        print(format_table(table, fmt))

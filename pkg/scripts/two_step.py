"""Direct d->r adaptation vs. the chained d->n->r route on the rain proxy.

    python scripts/two_step.py --seeds 0 1 2
"""

from dataclasses import replace

from _common import base_parser, make_runner, print_tables


def main():
    p = base_parser(__doc__)
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    args = p.parse_args()
    r = make_runner(args)
    enc, _ = r.day_model
    rows = [("day model", enc, r.bench.rain_test)]
    for s in args.seeds:
        cfg = replace(r.adapt_cfg, seed=s)
        night, rain = r.adapt_rain_chained(r.adapt_night(cfg), cfg)
        print(f"seed {s}: lineage {[i[:12] for i in rain.lineage]}")
        rows.append((f"d2n (seed {s})", night, r.bench.rain_test))
        rows.append((f"d2n2r (seed {s})", rain, r.bench.rain_test))
        rows.append((f"d2r (seed {s})", r.adapt_rain_direct(cfg), r.bench.rain_test))
    print_tables(r, rows, args.format)


if __name__ == "__main__":
    main()

"""Day model vs. adapted encoder on the seeded night proxy.

    python scripts/desk_benchmark.py [--epochs 30] [--save runs/night]
"""

from _common import base_parser, make_runner, print_tables



def main():
    p = base_parser(__doc__)
    p.add_argument("--save", help="directory for decoder/ and encoder-<tag>/ checkpoints")
    args = p.parse_args()
    r = make_runner(args)
    enc, dec = r.day_model
    night = r.adapt_night()
    b = r.bench
    print_tables(
        r,
        [
            ("day model, day test", enc, b.day_test[0]),
            ("day model, night proxy", enc, b.night_test),
            ("adapted d2n, night proxy", night, b.night_test),
        ],
        args.format,
    )
    if args.save:
        from depthadapt.runtime import EncoderRegistry

        EncoderRegistry(dec).register("day", enc).register("night", night).save(args.save)


if __name__ == "__main__":
    main()

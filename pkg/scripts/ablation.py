"""Loss-term ablation (FC; OC+OS; FC+OC; FC+OC+OS) averaged over seeds.

    python scripts/ablation.py --seeds 0 1 2
"""

import numpy as np
from _common import base_parser, make_runner

from dataclasses import replace

from depthadapt.evaluation import METRIC_NAMES, EvalReport, format_table
from depthadapt.trainer import ABLATIONS, ablation_weights


def _mean(reports):
    first = reports[0]
    vals = {k: float(np.mean([getattr(r, k) for r in reports])) for k in METRIC_NAMES}
    return EvalReport(**vals, cap=first.cap, scaling=first.scaling, n_pixels=first.n_pixels)


def main():
    p = base_parser(__doc__)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = p.parse_args()
    r = make_runner(args)
    images = r.bench.night_test
    encoders = {
        name: [r.adapt_night(replace(r.adapt_cfg, seed=s, weights=ablation_weights(name))) for s in args.seeds]
        for name in ABLATIONS
    }
    for scaling in ("median", "none"):
        rows = []
        for name, encs in encoders.items():
            for cap in (40.0, 60.0):
                rows.append((name, _mean([r.evaluate(e, images, (cap,), scaling)[cap] for e in encs])))
        print(format_table(rows, args.format))


if __name__ == "__main__":
    main()

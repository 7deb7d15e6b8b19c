"""Nonlocal vs baseline on the synthetic long-range task, several seeds each.

Writes one JSON summary per compared model plus per-run metrics.csv files.

    python3 scripts/field_of_view.py --out runs/fov
    python3 scripts/field_of_view.py --stages 2 4 --family fraclap --epochs 8
"""

import argparse
import json
import os
import time
from dataclasses import replace

from pidenet.experiment import FieldOfViewConfig, run_comparison


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/field_of_view")
    ap.add_argument("--family", default="diffusion")
    ap.add_argument("--stages", type=int, nargs="+", default=[2])
    ap.add_argument("--seeds", type=int, nargs="+")
    ap.add_argument("--epochs", type=int)
    ap.add_argument("--h", type=float)
    ap.add_argument("--no-baseline", action="store_true")
    args = ap.parse_args()

    cfg = FieldOfViewConfig()
    overrides = {k: v for k, v in (("epochs", args.epochs), ("h", args.h)) if v is not None}
    if args.seeds:
        overrides["seeds"] = tuple(args.seeds)
    cfg = replace(cfg, **overrides)
    os.makedirs(args.out, exist_ok=True)

    jobs = [] if args.no_baseline else [("none", 2)]
    jobs += [(args.family, s) for s in args.stages]
    t0 = time.perf_counter()
    summary = {}
    for family, stages in jobs:
        report = lambda r: print(f"{r.family:10s} stages={r.stages} seed={r.seed}  test acc {r.final_test_acc:.3f}  {r.seconds:.0f}s", flush=True)
        cmp = run_comparison(cfg, family, stages, on_run=report)
        for r in cmp.runs:
            run_dir = os.path.join(args.out, f"{cmp.label.replace('/', '_')}", f"seed{r.seed}")
            os.makedirs(run_dir, exist_ok=True)
            with open(os.path.join(run_dir, "history.json"), "w") as f:
                json.dump(r.history, f, indent=1)
        summary[cmp.label] = cmp.median
        with open(os.path.join(args.out, f"{cmp.label.replace('/', '_')}.json"), "w") as f:
            json.dump(cmp.to_json(), f, indent=1)
        print(f"{cmp.label}: median test acc {cmp.median:.3f}", flush=True)
    print(f"total {(time.perf_counter() - t0) / 60:.1f} min")
    for label, med in summary.items():
        print(f"  {label:24s} {med:.3f}")


if __name__ == "__main__":
    main()

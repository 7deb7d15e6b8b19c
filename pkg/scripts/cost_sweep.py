"""FLOP and parameter counts for the baseline and nonlocal networks, plus the pool-size sweep.

    python3 scripts/cost_sweep.py --input 96 96 --out runs/cost
"""

import argparse
import csv
import os

from pidenet.diagnostics.cost import flop_estimate, pool_sweep
from pidenet.hamiltonian import NetworkConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--input", type=int, nargs=2, default=[32, 32])
    ap.add_argument("--m", type=int, default=6)
    ap.add_argument("--channels", type=int, nargs=3, default=[32, 64, 112])
    ap.add_argument("--family", default="diffusion")
    ap.add_argument("--pools", type=int, nargs="+", default=[1, 2, 4, 6, 8, 12])
    ap.add_argument("--out", default="runs/cost")
    args = ap.parse_args()

    shape = (args.input[0], args.input[1], 3)
    base = NetworkConfig(m=args.m, channels=tuple(args.channels))
    nl = NetworkConfig(m=args.m, channels=tuple(args.channels), nonlocal_family=args.family)
    os.makedirs(args.out, exist_ok=True)
    b = flop_estimate(base, shape)
    b.write(os.path.join(args.out, "baseline.json"), os.path.join(args.out, "baseline.csv"))
    print(f"baseline: {b.layer_count} layers, {b.total_flops / 1e6:.1f}M FLOPs, {b.total_params / 1e6:.3f}M parameters")

    sweep = pool_sweep(nl, shape, tuple(args.pools))
    with open(os.path.join(args.out, "pool_sweep.csv"), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["pool", "total_flops", "kernel_flops", "params", "overhead_vs_baseline"])
        for p, r in sweep.items():
            w.writerow([p, r.total_flops, r.kernel_flops, r.total_params, r.total_flops / b.total_flops])
            print(f"{args.family} pool {p:2d}: {r.total_flops / 1e6:9.1f}M FLOPs (kernel {r.kernel_flops / 1e6:8.1f}M), x{r.total_flops / b.total_flops:.2f} baseline")


if __name__ == "__main__":
    main()

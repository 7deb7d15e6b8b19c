"""Continuous-side checks in one report: diffusion decay, two-point closed form, fractional symbol.

    python3 scripts/pide_lab_report.py --out runs/pide-lab
"""

import argparse
import os

import numpy as np

from pidenet import pide_lab as lab


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/pide-lab")
    ap.add_argument("--kernels", type=int, default=100)
    ap.add_argument("--points", type=int, nargs="+", default=[128, 256, 512])
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)

    held = 0
    for seed in range(args.kernels):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(4, 33))
        omega = lab.random_symmetric_kernel(n, rng, density=rng.uniform(0.2, 1.0))
        traj = lab.simulate_diffusion(rng.standard_normal(n), omega, rng.uniform(0.05, 1.0) * lab.step_bound(omega), 200)
        held += traj.decay_holds()
        if seed == 0:
            lab.write_diffusion_csv(os.path.join(args.out, "diffusion_seed0.csv"), traj)
    print(f"energy decay held for {held}/{args.kernels} random kernels at dt <= 1/max row sum")

    omega = np.array([[0.0, 1.0], [1.0, 0.0]])
    traj = lab.simulate_diffusion(np.array([1.0, -1.0]), omega, 0.25, 50)
    exact = np.array([lab.two_point_difference(2.0, 1.0, 0.25, t) for t in range(51)])
    print(f"two-point closed form max error {np.abs(traj.states[:, 0] - traj.states[:, 1] - exact).max():.2e}")

    rows = [lab.measure_symbol(n, s, xi) for n in args.points for s in (0.25, 0.5, 0.75) for xi in (1, 2)]
    lab.write_symbol_csv(os.path.join(args.out, "symbol.csv"), rows)
    for r in rows:
        print(f"N={r.points:4d} s={r.s:.2f} xi={r.xi:.0f}: measured {r.measured:9.3f} exact {r.exact:9.3f} rel err {r.relative_error:.2%}")


if __name__ == "__main__":
    main()

"""Eigenvalues of the nonlocal mixing weights of a checkpoint, compared before and after training.

    python3 scripts/spectra.py runs/latest/checkpoint.pidn --out runs/spectra
"""

import argparse
import os

from pidenet.diagnostics.spectral import spectral_reports, write_reports
from pidenet.trainer import load_checkpoint


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("checkpoints", nargs="+")
    ap.add_argument("--out", default="runs/spectra")
    args = ap.parse_args()
    for path in args.checkpoints:
        reports = spectral_reports(load_checkpoint(path).tensors)
        out = os.path.join(args.out, os.path.splitext(os.path.basename(path))[0])
        write_reports(out, reports, None if reports else "no nonlocal blocks")
        for r in reports:
            print(f"{path} {r.name}: Re>0 {r.fraction_positive:.2f}, symmetric part Re>0 {r.symmetric_fraction_positive:.2f}")


if __name__ == "__main__":
    main()

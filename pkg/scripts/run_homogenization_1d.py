#!/usr/bin/env python3
"""1D two-phase laminate: minimum energies of F_h against the harmonic-mean limit.

Writes gamma_study.csv and gamma_study_plot.dat into --out.
"""
import argparse
import sys
from pathlib import Path

from xfg.cli import run

HERE = Path(__file__).resolve().parent


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=HERE / "configs" / "homogenization_1d.json")
    ap.add_argument("--out", default="results/homogenization_1d")
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    Path(args.out).mkdir(parents=True, exist_ok=True)
    return run(["gamma-study", "--config", str(args.config), "--out", args.out, "--threads", str(args.threads)])


if __name__ == "__main__":
    sys.exit(main())

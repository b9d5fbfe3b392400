#!/usr/bin/env python3
"""Interior W^{1,2}_X error of u - J_eps u for a few fields, with observed rates between successive eps."""
import argparse

import numpy as np

from xfg import sobolev as sb
from xfg import vector_fields as vf

FIELDS = {
    "x1*x2": lambda p: p[..., 0] * p[..., 1],
    "|x1|": lambda p: np.abs(p[..., 0]),
    "sin(3x1)x2": lambda p: np.sin(3 * p[..., 0]) * p[..., 1],
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--cells", type=int, default=200)
    ap.add_argument("--eps", default="0.4,0.2,0.1,0.05")
    ap.add_argument("--family", choices=["euclidean", "grushin"], default="euclidean")
    args = ap.parse_args()
    fam = vf.euclidean(2) if args.family == "euclidean" else vf.grushin()
    g = sb.Grid.uniform(fam.domain, args.cells)
    eps = [float(e) for e in args.eps.split(",")]
    interior = sb.Subdomain.of((-0.5, -0.5), (0.5, 0.5))
    print("field,eps,error,rate")
    for name, u in FIELDS.items():
        rep = sb.mollifier_approx_check(g.sample(u), fam, eps, interior, p=2.0)
        prev = None
        for e, err in zip(eps, rep.errors):
            rate = "" if prev is None or err <= 0 else f"{np.log2(prev / err):.3f}"
            print(f"{name},{e},{err:.6e},{rate}")
            prev = err


if __name__ == "__main__":
    main()

"""Numerical diffusivity of the slowest periodic mode on refined pipes."""

import argparse
from pathlib import Path

import numpy as np

from trilbm import io
from trilbm.analysis import param_set
from trilbm.mesh import build_d2t4_periodic, build_d2t7_periodic
from trilbm.spectral import pipe_diffusivity


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sets", default="d2t7-order2,d2t7-order4,d2t7-order6,d2t4-order4")
    ap.add_argument("--nx", type=int, default=96)
    ap.add_argument("--ny", type=int, default=4)
    ap.add_argument("--refinements", type=int, default=3)
    ap.add_argument("--out", default="results/pipe")
    args = ap.parse_args()
    for name in args.sets.split(","):
        p = param_set(name)
        build = build_d2t7_periodic if p.scheme == "d2t7" else build_d2t4_periodic
        rows = []
        for r in range(args.refinements):
            nx, ny = args.nx * 2**r, args.ny * 2**r
            res = pipe_diffusivity(build(nx, ny), p)
            rows.append((nx, ny, res.k, res.mu_num.real, res.eps))
            print(f"{name:14s} {nx:5d}x{ny:<3d} k={res.k:.4e} eps={res.eps:.4e}")
        ks = np.array([r[2] for r in rows])
        eps = np.array([r[4] for r in rows])
        print(f"{name:14s} slope {np.polyfit(np.log(ks), np.log(eps), 1)[0]:.3f}")
        io.write_csv(Path(args.out) / f"{name}.csv", ["nx", "ny", "k", "mu_num", "eps"], rows)


if __name__ == "__main__":
    main()

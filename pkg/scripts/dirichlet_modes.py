"""Leading symmetric Dirichlet eigenvalues on the triangle, compared with 12, 48 and 108."""

import argparse

from trilbm import io
from trilbm.harness import ExperimentConfig, OutputSpec, run_dirichlet_modes


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sets", default="d2t7-order2,d2t7-order4,d2t7-order6,d2t4-order2,d2t4-order4")
    ap.add_argument("--n", type=int, default=61)
    ap.add_argument("--nev", type=int, default=12)
    ap.add_argument("--out", default="results/modes")
    args = ap.parse_args()
    summary = {}
    for name in args.sets.split(","):
        cfg = ExperimentConfig(experiment="modes", param_set=name, scheme=name.split("-")[0], n_edge=args.n, nev=args.nev,
                               outputs=OutputSpec(directory=f"{args.out}/{name}", formats=("csv", "json")))
        res = run_dirichlet_modes(cfg)
        row = {f"{m},{n}": mm.Lambda_num.real for (m, n), mm in res.matches.items()}
        summary[name] = row
        print(f"{name:14s} " + "  ".join(f"{v:10.5f}" for v in row.values()))
    io.write_json(f"{args.out}/summary.json", summary)


if __name__ == "__main__":
    main()

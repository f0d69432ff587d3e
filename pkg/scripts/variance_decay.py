"""Per-level variance table for the Poisson hierarchy (h = 1/8, 1/16, 1/32).

Prints the median over QOI components of V[Q_0] and V[Q_l - Q_{l-1}],
the median IACT and the acceptance rate of every level.

    python3 scripts/variance_decay.py --samples 2000 400 80 --subsampling 5 2 0
"""

import argparse
import json
import time

import numpy as np

from mlmcmc.models.poisson import PoissonHierarchy, generate_synthetic_data
from mlmcmc.multilevel import run_multilevel


def variance_table(samples=(2000, 400, 80), subsampling=(5, 2, 0), meshes=(8, 16, 32), modes=8,
                   burn_in=(200, 20, 5), coarse_burn_in=50, seed=0, data_seed=0, sigma=0.01):
    data = generate_synthetic_data(data_seed, mesh_size=meshes[-1], sigma=sigma, num_modes=modes)
    f = PoissonHierarchy(data, meshes, subsampling=subsampling)
    res = run_multilevel(f, list(samples), burn_in=list(burn_in), coarse_burn_in=coarse_burn_in, seed=seed)
    rows = []
    for r in res.levels:
        rows.append({"level": r.level, "mesh": meshes[r.level], "samples": r.estimate.count,
                     "median_variance": float(np.median(r.estimate.variance)),
                     "median_iact": float(np.median(r.iact)), "acceptance_rate": r.acceptance_rate,
                     "model_evaluations": r.model_evaluations})
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, nargs=3, default=[2000, 400, 80])
    ap.add_argument("--subsampling", type=int, nargs=3, default=[5, 2, 0])
    ap.add_argument("--meshes", type=int, nargs=3, default=[8, 16, 32])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--data-seed", type=int, default=0)
    ap.add_argument("--json", action="store_true", help="print rows as JSON")
    args = ap.parse_args(argv)
    t0 = time.perf_counter()
    rows = variance_table(args.samples, args.subsampling, args.meshes, seed=args.seed, data_seed=args.data_seed)
    if args.json:
        print(json.dumps(rows, indent=1))
        return
    print(f"{'level':>5} {'h':>6} {'N':>6} {'median V':>11} {'tau':>6} {'accept':>7} {'evals':>8}")
    for r in rows:
        print(f"{r['level']:5d} {'1/' + str(r['mesh']):>6} {r['samples']:6d} {r['median_variance']:11.4e} "
              f"{r['median_iact']:6.2f} {r['acceptance_rate']:7.3f} {r['model_evaluations']:8d}")
    print(f"V1/V0 = {rows[1]['median_variance'] / rows[0]['median_variance']:.4f}   "
          f"({time.perf_counter() - t0:.0f} s)")


if __name__ == "__main__":
    main()

"""Level-0 throughput of a delay-model run as the number of worker groups
grows, with fixed sample quotas.

    python3 scripts/scaling_experiment.py --groups 1 2 4 8
"""

import argparse
import tempfile
import time

from mlmcmc.config import RunConfig, validate
from mlmcmc.runner import execute


def scaling_config(groups: int, samples: int = 160, runtime: float = 0.02, seed: int = 0) -> RunConfig:
    return validate(RunConfig(model="delay", levels=1, samples=[samples], seed=seed, trace=False,
                              groups=groups, proposal_cov=2.0, delay_runtimes=[runtime], delay_jitter=0.1))


def throughput(cfg: RunConfig) -> float:
    """Recorded level-0 samples per second of wall time."""
    with tempfile.TemporaryDirectory() as d:
        t0 = time.perf_counter()
        res = execute(cfg, d)
        wall = time.perf_counter() - t0
    if res.status != 0:
        raise RuntimeError(f"run failed with status {res.status}")
    return res.summary["levels"][0]["samples"] / wall


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--groups", type=int, nargs="+", default=[1, 2, 4, 8])
    ap.add_argument("--samples", type=int, default=160)
    ap.add_argument("--runtime", type=float, default=0.02)
    args = ap.parse_args(argv)
    base = None
    for g in args.groups:
        rate = throughput(scaling_config(g, args.samples, args.runtime))
        base = base or rate
        print(f"groups={g:3d} throughput={rate:8.1f}/s speedup={rate / base:5.2f}x")


if __name__ == "__main__":
    main()

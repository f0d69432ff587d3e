"""Wall time of a skewed delay-model run with and without dynamic load
balancing.

    python3 scripts/scheduler_experiment.py --samples 100 20 12 --initial 10 1 1
"""

import argparse
import tempfile
import time

from mlmcmc.config import RunConfig, validate
from mlmcmc.parallel.phonebook import throttle_violations
from mlmcmc.runner import execute, read_decisions


def scheduler_config(samples, initial, runtimes=(0.01, 0.1, 1.0), balancing=True, seed=0,
                     burn_in=None, hysteresis=2.0, jitter=0.1) -> RunConfig:
    n = len(samples)
    return validate(RunConfig(
        model="delay", levels=n, samples=list(samples), seed=seed, trace=False,
        subsampling=[2] * (n - 1) + [0], burn_in=list(burn_in or [2] + [0] * (n - 1)),
        mode="remote", groups=sum(initial), initial_groups=list(initial), load_balancing=balancing,
        hysteresis=hysteresis, proposal_cov=2.0, delay_runtimes=list(runtimes), delay_jitter=jitter,
        timeout=600.0))


def timed_run(cfg: RunConfig):
    with tempfile.TemporaryDirectory() as d:
        t0 = time.perf_counter()
        res = execute(cfg, d)
        wall = time.perf_counter() - t0
        decisions = read_decisions(f"{d}/decisions.csv")
    return res.status, wall, decisions


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, nargs="+", default=[100, 20, 12])
    ap.add_argument("--initial", type=int, nargs="+", default=[10, 1, 1])
    ap.add_argument("--runtimes", type=float, nargs="+", default=[0.01, 0.1, 1.0])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    walls = {}
    for lb in (False, True):
        cfg = scheduler_config(args.samples, args.initial, args.runtimes, lb, args.seed)
        status, wall, dec = timed_run(cfg)
        walls[lb] = wall
        print(f"load_balancing={lb!s:5} status={status} wall={wall:7.2f}s moves={len(dec)} "
              f"throttle_violations={len(throttle_violations(dec))}")
    print(f"speedup {walls[False] / walls[True]:.2f}x")


if __name__ == "__main__":
    main()

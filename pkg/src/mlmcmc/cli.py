"""Command line interface.

Exit codes: 0 success, 2 configuration error, 3 role failure during a run,
4 incomplete estimation (timeout or missing samples). The environment
variable ``MLMCMC_OUTPUT_DIR`` overrides the configured output directory
(``--output-dir`` overrides both).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from typing import Optional, Sequence

from .config import TRANSPORTS, ConfigError, parse_config, validate
from .report import SummaryError, report

EXIT_OK, EXIT_CONFIG, EXIT_FAILURE, EXIT_INCOMPLETE = 0, 2, 3, 4
OUTPUT_ENV = "MLMCMC_OUTPUT_DIR"

log = logging.getLogger("mlmcmc")


def _load(args) -> "RunConfig":  # noqa: F821
    cfg = parse_config(args.config)
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "transport", None):
        changes["transport"] = args.transport
    if getattr(args, "no_load_balancing", False):
        changes["load_balancing"] = False
    if changes:
        cfg = validate(replace(cfg, **changes), path=args.config)
    return cfg


def cmd_run(args) -> int:
    from .runner import execute
    cfg = _load(args)
    out = args.output_dir or os.environ.get(OUTPUT_ENV) or cfg.output_dir
    try:
        res = execute(cfg, out, trace=True if args.trace else None)
    except Exception as e:
        log.error("run failed: %s", e)
        return EXIT_FAILURE
    s = res.summary
    print(f"status {s['status']}  wall time {s['wall_time']:.3f} s  output {res.output_dir}")
    if s["estimate"] is not None:
        for i, (m, se) in enumerate(zip(s["estimate"], s["standard_error"])):
            print(f"  E[Q_{i}] = {m:.6g} +- {se:.3g}")
    if res.status == 3:
        print(f"role failure: {s.get('failure')}", file=sys.stderr)
    elif res.status == 4:
        print("estimation incomplete; partial artifacts written", file=sys.stderr)
    return res.status


def cmd_validate(args) -> int:
    cfg = _load(args)
    if args.print:
        sys.stdout.write(cfg.to_text())
    else:
        print(f"{args.config}: ok ({cfg.model}, {cfg.levels} level(s), samples {cfg.samples})")
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        print(report(args.summaries, args.csv))
    except SummaryError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def cmd_gen_data(args) -> int:
    from .models.poisson import generate_synthetic_data
    n = args.mesh
    if n < 4 or n & (n - 1):
        print(f"error: --mesh {n} is not a power of two >= 4", file=sys.stderr)
        return EXIT_CONFIG
    data = generate_synthetic_data(args.seed, n, args.sigma, args.modes, noisy=args.noisy)
    data.save(args.output)
    print(f"wrote {args.output} (theta {len(data.theta)} modes, {len(data.values)} observations)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mlmcmc", description="Multilevel MCMC with a parallel sampling runtime.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an estimation and write its artifacts")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--transport", choices=TRANSPORTS)
    r.add_argument("--no-load-balancing", action="store_true")
    r.add_argument("--trace", action="store_true", help="record the message trace (trace.csv) even if the config disables it")
    r.add_argument("--output-dir")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("validate-config", help="check a configuration file")
    v.add_argument("--config", required=True)
    v.add_argument("--seed", type=int)
    v.add_argument("--transport", choices=TRANSPORTS)
    v.add_argument("--no-load-balancing", action="store_true")
    v.add_argument("--print", action="store_true", help="print the normalised configuration")
    v.set_defaults(func=cmd_validate)

    rp = sub.add_parser("report", help="compare run summaries")
    rp.add_argument("summaries", nargs="+")
    rp.add_argument("--csv", help="export the run comparison as CSV")
    rp.set_defaults(func=cmd_report)

    g = sub.add_parser("gen-data", help="generate synthetic Poisson observations")
    g.add_argument("--output", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--mesh", type=int, default=32, help="cells per side of the generating mesh")
    g.add_argument("--sigma", type=float, default=0.01)
    g.add_argument("--modes", type=int, default=8)
    g.add_argument("--noisy", action="store_true")
    g.set_defaults(func=cmd_gen_data)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

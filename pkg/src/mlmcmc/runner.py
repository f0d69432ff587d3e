"""Turns a RunConfig into a model, runs it on the parallel runtime and
writes the run artifacts."""

from __future__ import annotations

import functools
import json
import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

from .config import RunConfig
from .hierarchy import HierarchyFactory
from .models import DelayHierarchy, DelayModelSpec, GaussianHierarchy, PoissonHierarchy, SyntheticData
from .models.poisson import generate_synthetic_data
from .multilevel import pooled_iact, telescoping_estimate
from .parallel.layout import LayoutConfig
from .parallel.phonebook import SchedulerConfig
from .parallel.roles import RuntimeSettings
from .parallel.runtime import RunOutcome, run_runtime
from .parallel.trace import write_trace

log = logging.getLogger(__name__)

SUMMARY_SCHEMA = "mlmcmc-summary/1"
SAMPLES_SCHEMA = "mlmcmc-samples/1"
DECISIONS_HEADER = ("time", "group", "source", "target", "window")


def load_or_generate_data(cfg: RunConfig) -> SyntheticData:
    if cfg.poisson_data:
        return SyntheticData.load(cfg.poisson_data)
    return generate_synthetic_data(cfg.poisson_data_seed, cfg.poisson_mesh_sizes[-1], cfg.poisson_sigma,
                                   cfg.poisson_modes)


def build_factory(cfg: RunConfig, data: Optional[SyntheticData] = None) -> HierarchyFactory:
    """Model hierarchy described by ``cfg`` (module level so it pickles)."""
    cov = 1.0 if cfg.proposal_cov is None else cfg.proposal_cov
    common = dict(subsampling=cfg.subsampling, am_interval=cfg.am_interval, am_eps=cfg.am_eps,
                  adaptive=cfg.adaptive)
    if cfg.model == "gaussian":
        if cfg.gaussian_kind == "converging":
            return GaussianHierarchy.converging(cfg.levels, cfg.gaussian_target, cov=cfg.gaussian_cov,
                                                proposal_cov=cov, **common)
        return GaussianHierarchy.identical(cfg.levels, len(cfg.gaussian_target), mean=cfg.gaussian_target,
                                           cov=cfg.gaussian_cov, proposal_cov=cov, **common)
    if cfg.model == "delay":
        spec = DelayModelSpec(cfg.delay_runtimes, cfg.delay_jitter, cfg.delay_mean, cfg.delay_cov, cfg.seed)
        return DelayHierarchy(spec, proposal_cov=cov, **common)
    if data is None:
        data = load_or_generate_data(cfg)
    return PoissonHierarchy(data, cfg.poisson_mesh_sizes, prior_var=cfg.poisson_prior_var,
                            qoi_width=cfg.poisson_qoi_width, proposal_cov=cfg.proposal_cov, **common)


def runtime_settings(cfg: RunConfig) -> RuntimeSettings:
    sched = SchedulerConfig(hysteresis=cfg.hysteresis, ema_alpha=cfg.ema_alpha, store_limit=cfg.store_limit,
                            load_balancing=cfg.load_balancing)
    return RuntimeSettings(cfg.levels, list(cfg.samples), list(cfg.burn_in), cfg.coarse_burn_in, cfg.mode,
                           cfg.seed, sched, cfg.collector_window, cfg.timeout)


def layout_config(cfg: RunConfig) -> LayoutConfig:
    return LayoutConfig(cfg.levels, cfg.group_size, cfg.groups, list(cfg.collectors), list(cfg.initial_groups))


@dataclass
class RunResult:
    status: int
    summary: dict
    output_dir: Path
    outcome: Optional[RunOutcome] = None


def _json_safe(x):
    if isinstance(x, dict):
        return {k: _json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_safe(v) for v in x]
    if isinstance(x, np.ndarray):
        return _json_safe(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return None if not math.isfinite(float(x)) else float(x)
    return x


def sample_columns(level: int, dim: int, qdim: int) -> List[str]:
    cols = ["level", "chain", "step", "accepted"]
    cols += [f"theta_{i}" for i in range(dim)] + [f"qoi_{i}" for i in range(qdim)]
    if level > 0:
        cols += [f"coarse_qoi_{i}" for i in range(qdim)]
    return cols


def write_samples(path, level: int, rows: np.ndarray, dim: int, qdim: int) -> None:
    """Rows as produced by the collectors: chain, step, accepted, theta,
    qoi and (above level 0) the coarse qoi."""
    cols = sample_columns(level, dim, qdim)
    with open(path, "w") as fh:
        fh.write(f"# schema={SAMPLES_SCHEMA}\n")
        fh.write(",".join(cols) + "\n")
        for r in rows:
            ints = [level, int(r[0]), int(r[1]), int(r[2])]
            fh.write(",".join(map(str, ints)) + "," + ",".join(repr(float(v)) for v in r[3:]) + "\n")


def read_samples(path) -> tuple:
    """(column names, float array) of a sample CSV."""
    with open(path) as fh:
        first = fh.readline()
        header = first if not first.startswith("#") else fh.readline()
    cols = header.strip().split(",")
    data = np.loadtxt(path, delimiter=",", comments="#", skiprows=2 if first.startswith("#") else 1, ndmin=2)
    return cols, data


def write_decisions(path, decisions: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(DECISIONS_HEADER) + "\n")
        for t, g, s, d, w in np.asarray(decisions).reshape(-1, 5):
            fh.write(f"{float(t)!r},{int(g)},{int(s)},{int(d)},{float(w)!r}\n")


def read_decisions(path) -> np.ndarray:
    with open(path) as fh:
        lines = fh.read().splitlines()[1:]
    if not lines:
        return np.empty((0, 5))
    return np.loadtxt(lines, delimiter=",", ndmin=2).reshape(-1, 5)


def summarize(cfg: RunConfig, outcome: RunOutcome, dim: int, qdim: int) -> dict:
    root = outcome.root
    levels, estimates, iacts = [], [], []
    for lo in root.levels:
        l = lo.level
        rows = lo.rows
        n = rows.shape[0] if rows.size else 0
        entry = {"level": l, "samples": n, "requested": int(cfg.samples[l]), "complete": bool(lo.complete),
                 "subsampling": int(cfg.subsampling[l]),
                 "model_evaluations": int(root.evaluations[l]),
                 "runtime": float(root.runtimes[l]) if l < len(root.runtimes) else None}
        if n:
            q = rows[:, 3 + dim:3 + dim + qdim]
            vals = q if l == 0 else q - rows[:, 3 + dim + qdim:3 + dim + 2 * qdim]
            tau = pooled_iact(vals, rows[:, 0])
            entry.update(acceptance_rate=float(rows[:, 2].mean()), chains=int(np.unique(rows[:, 0]).size),
                         iact=tau, median_iact=float(np.median(tau)))
            iacts.append(tau)
        if lo.estimate is not None:
            var = lo.estimate.variance
            entry.update(mean=lo.estimate.mean, variance=var, median_variance=float(np.median(var)))
            estimates.append(lo.estimate)
        levels.append(entry)
    est = se = None
    if len(estimates) == cfg.levels and len(iacts) == cfg.levels and all(e.count > 1 for e in estimates):
        est, se = telescoping_estimate(estimates, iacts)
    layout = outcome.layout
    return _json_safe({
        "schema": SUMMARY_SCHEMA,
        "status": root.status,
        "complete": root.status == 0,
        "failure": root.failure,
        "model": cfg.model,
        "mode": cfg.mode,
        "transport": cfg.transport,
        "seed": cfg.seed,
        "processes": layout.total,
        "groups": len(layout.groups),
        "group_size": cfg.group_size,
        "load_balancing": cfg.load_balancing,
        "wall_time": root.wall_time,
        "levels": levels,
        "estimate": est,
        "standard_error": se,
        "reassignments": int(root.decisions.shape[0]),
        "samples_announced": root.samples_announced,
        "config": cfg.to_dict(),
    })


def execute(cfg: RunConfig, output_dir=None, trace: Optional[bool] = None) -> RunResult:
    """Run ``cfg`` and write every artifact into ``output_dir``.

    Artifacts: ``samples_level{l}.csv``, ``summary.json``,
    ``decisions.csv`` (scheduler moves) and, with tracing on,
    ``trace.csv`` (one line per message)."""
    trace = cfg.trace if trace is None else trace
    out = Path(output_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = None
    if cfg.model == "poisson":
        data = load_or_generate_data(cfg)
        data.save(out / "data.json")
    builder = functools.partial(build_factory, cfg, data)
    factory = builder()
    probe = factory.sampling_problem(0)
    dim, qdim = probe.dim, probe.qoi_dim
    outcome = run_runtime(builder, runtime_settings(cfg), layout_config(cfg), cfg.processes,
                          cfg.transport, trace=trace)
    for lo in outcome.root.levels:
        rows = lo.rows if lo.rows.size else np.zeros((0, 3 + dim + qdim * (2 if lo.level else 1)))
        write_samples(out / f"samples_level{lo.level}.csv", lo.level, rows, dim, qdim)
    write_decisions(out / "decisions.csv", outcome.root.decisions)
    if trace:
        write_trace(out / "trace.csv", outcome.trace)
    summary = summarize(cfg, outcome, dim, qdim)
    summary["trace"] = bool(trace)
    tmp = out / "summary.json.tmp"
    tmp.write_text(json.dumps(summary, indent=1) + "\n")
    os.replace(tmp, out / "summary.json")
    return RunResult(outcome.root.status, summary, out, outcome)

"""Comparison tables over run summaries.

Per run, a level table with the time per sample ``t_l``, the subsampling
rate ``rho_l``, the integrated autocorrelation time ``tau_l`` and the
(median over QOI components) variance of Q_0 or Q_l - Q_{l-1}. Across
runs, wall time, speedup ``t_ref / t_N`` and efficiency
``100 * t_ref / t_N`` relative to the first summary.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

from .runner import SUMMARY_SCHEMA


class SummaryError(ValueError):
    pass


@dataclass
class RunRow:
    name: str
    processes: int
    groups: int
    wall_time: float
    speedup: float
    efficiency: float
    status: int


def load_summary(path) -> dict:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as e:
        raise SummaryError(f"{path}: cannot read summary ({e.strerror})") from None
    except json.JSONDecodeError as e:
        raise SummaryError(f"{path}: not valid JSON ({e.msg}, line {e.lineno})") from None
    if not isinstance(data, dict) or data.get("schema") != SUMMARY_SCHEMA:
        raise SummaryError(f"{path}: not a run summary (expected schema {SUMMARY_SCHEMA})")
    for key in ("wall_time", "levels", "processes"):
        if key not in data:
            raise SummaryError(f"{path}: summary lacks '{key}'")
    if not isinstance(data["wall_time"], (int, float)) or not isinstance(data["levels"], list):
        raise SummaryError(f"{path}: malformed 'wall_time' or 'levels'")
    return data


def comparison(summaries: Sequence[dict], names: Optional[Sequence[str]] = None) -> List[RunRow]:
    names = list(names) if names is not None else [f"run{i}" for i in range(len(summaries))]
    if not summaries:
        return []
    t_ref = summaries[0]["wall_time"]
    rows = []
    for name, s in zip(names, summaries):
        t = s["wall_time"]
        sp = t_ref / t if t > 0 else float("nan")
        rows.append(RunRow(name, int(s["processes"]), int(s.get("groups", 0)), t, sp, 100.0 * sp,
                           int(s.get("status", 0))))
    return rows


def _fmt(v, spec: str = ".4g") -> str:
    if v is None:
        return "-"
    return format(v, spec)


def level_table(summary: dict, name: str = "") -> str:
    head = f"{'level':>5} {'N_l':>8} {'t_l [s]':>11} {'rho_l':>6} {'tau_l':>8} {'V_l':>11} {'accept':>7} {'evals':>9}"
    lines = [f"== {name} ({summary.get('model', '?')}, status {summary.get('status', '?')})", head]
    for l in summary["levels"]:
        lines.append(f"{l['level']:>5} {l.get('samples', 0):>8} {_fmt(l.get('runtime')):>11} "
                     f"{l.get('subsampling', 0):>6} {_fmt(l.get('median_iact')):>8} "
                     f"{_fmt(l.get('median_variance')):>11} {_fmt(l.get('acceptance_rate'), '.3f'):>7} "
                     f"{l.get('model_evaluations', 0):>9}")
    est = summary.get("estimate")
    if est is not None:
        se = summary.get("standard_error") or [None] * len(est)
        lines.append("estimate: " + ", ".join(f"{_fmt(m)} +- {_fmt(s)}" for m, s in zip(est, se)))
    return "\n".join(lines)


def runs_table(rows: Sequence[RunRow]) -> str:
    head = f"{'run':<24} {'procs':>6} {'groups':>6} {'wall [s]':>10} {'speedup':>8} {'eff [%]':>8} {'status':>6}"
    lines = [head]
    for r in rows:
        lines.append(f"{r.name:<24} {r.processes:>6} {r.groups:>6} {r.wall_time:>10.3f} {r.speedup:>8.3f} "
                     f"{r.efficiency:>8.1f} {r.status:>6}")
    return "\n".join(lines)


def write_csv(path, rows: Sequence[RunRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "processes", "groups", "wall_time", "speedup", "efficiency_percent", "status"])
        for r in rows:
            w.writerow([r.name, r.processes, r.groups, repr(r.wall_time), repr(r.speedup), repr(r.efficiency),
                        r.status])


def report(paths: Sequence, csv_path=None) -> str:
    if not paths:
        raise SummaryError("report needs at least one summary file")
    summaries = [load_summary(p) for p in paths]
    names = [str(p) for p in paths]
    rows = comparison(summaries, names)
    parts = [level_table(s, n) for s, n in zip(summaries, names)]
    parts.append(runs_table(rows))
    if csv_path is not None:
        write_csv(csv_path, rows)
    return "\n\n".join(parts)

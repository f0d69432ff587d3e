"""Role loops. Each role owns one endpoint and runs on its own thread (or
process); all interaction goes through messages."""

from __future__ import annotations

import logging
import math
import time
import traceback
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..chain import ensure_qoi
from ..hierarchy import GroupComm, HierarchyFactory
from ..multilevel import (BASE, CORRECTION, CoarseSample, LevelEstimate, SingleLevelChain,
                          TwoLevelKernel, build_chain, merge_statistics)
from ..probability import RngStream
from .layout import Collector, Controller, Idle, Layout, Phonebook as PhonebookRole, Worker, split_groups
from .messages import (CANCELLED, CHAIN, COLLECTOR, DENSITY, DONE, EVAL_NONFINITE, EVAL_OK, FAILURE,
                       NO_PROVIDER, OK, QOI, REPORT_CONTROLLER, REPORT_PHONEBOOK, TIMEOUT, Message, Tag)
from .phonebook import Phonebook, SchedulerConfig

log = logging.getLogger(__name__)

ROOT, PHONEBOOK = 0, 1


@dataclass
class RuntimeSettings:
    """Everything a role needs besides the model factory."""

    num_levels: int
    samples: Sequence[int]
    burn_in: Sequence[int]
    coarse_burn_in: int = 0
    mode: str = "local"                 # 'local' embeds coarse chains, 'remote' asks the phonebook
    seed: int = 0
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    collector_window: int = 4
    timeout: float = 600.0
    tick: float = 0.01                  # phonebook rebalance period when idle

    @property
    def remote(self) -> bool:
        return self.mode == "remote"


class _Stop(Exception):
    """Unwinds a controller out of its chain (shutdown or reassignment)."""


class RoleFailure(RuntimeError):
    pass


def _sample_row(d: dict) -> np.ndarray:
    return np.concatenate([[d["chain"], d["step"], d["accepted"]], d["theta"], d["qoi"], d["coarse_qoi"]])


# --- worker ------------------------------------------------------------------------


def evaluate(problem, what: int, theta: np.ndarray):
    """(error mark, value vector) for one evaluation request."""
    if what == DENSITY:
        v = float(problem.log_density(theta))
        if math.isnan(v) or v == math.inf:
            return EVAL_NONFINITE, np.array([math.nan])
        return EVAL_OK, np.array([v])
    q = np.atleast_1d(np.asarray(problem.qoi(theta), dtype=float))
    return (EVAL_OK if np.all(np.isfinite(q)) else EVAL_NONFINITE), q


def worker_loop(ep, factory: HierarchyFactory, group: int = 0, rank: int = 0, size: int = 1) -> int:
    """Serve EvaluateDensity until Shutdown. Problems are built lazily per
    level with this worker's group handle."""
    comm = GroupComm(group, rank, size)
    problems: Dict[int, object] = {}
    while True:
        msg = ep.recv()
        if msg.tag == Tag.Shutdown:
            return 0
        if msg.tag == Tag.AssignGroup:
            comm = GroupComm(msg["group"], msg["rank"], max(1, len(msg["members"])))
            problems.clear()
        elif msg.tag == Tag.ReassignGroup:
            problems.clear()
        elif msg.tag == Tag.EvaluateDensity:
            level = msg["level"]
            if level not in problems:
                problems[level] = factory.sampling_problem(level, comm)
            err, val = evaluate(problems[level], msg["what"], msg["theta"])
            ep.send(msg.sender, Tag.DensityResult, eval_id=msg["eval_id"], error=err, value=val)
        else:
            raise RoleFailure(f"worker got unexpected {msg.tag.name}")


# --- controller -----------------------------------------------------------------------


class _GroupProblem:
    """Sampling-problem stand-in whose evaluations run on the worker group."""

    def __init__(self, ctrl: "ControllerRole", level: int, dim: int, qoi_dim: int):
        self.ctrl = ctrl
        self.level = level
        self.dim = dim
        self.qoi_dim = qoi_dim

    def log_density(self, theta) -> float:
        return float(self.ctrl.evaluate(self.level, DENSITY, theta)[0])

    def qoi(self, theta) -> np.ndarray:
        return self.ctrl.evaluate(self.level, QOI, theta)


class _GroupFactory:
    def __init__(self, ctrl: "ControllerRole", factory: HierarchyFactory):
        self._ctrl = ctrl
        self._f = factory

    def sampling_problem(self, level, comm=None):
        return self._ctrl.problem(level)

    def interpolation(self, level):
        return self._f.interpolation(level)

    def __getattr__(self, name):
        return getattr(self._f, name)


class _RemoteSource:
    """Coarse proposals fetched through the phonebook from other chains."""

    def __init__(self, ctrl: "ControllerRole", level: int):
        self.ctrl = ctrl
        self.level = level
        self.coarse_steps = 0

    def next_proposal(self) -> CoarseSample:
        d = self.ctrl.request_sample(self.level)
        self.coarse_steps += 1
        return CoarseSample(np.array(d["theta"]), float(d["log_density"]), np.array(d["qoi"]))


class ControllerRole:
    def __init__(self, ep, factory: HierarchyFactory, settings: RuntimeSettings):
        self.ep = ep
        self.factory = factory
        self.s = settings
        self.workers: List[int] = []
        self.group = 0
        self.level = self.chain_id = self.epoch = 0
        self.quota: Optional[int] = None
        self.stop_reason: Optional[int] = None
        self.reassign: Optional[Message] = None
        self._results: Dict[int, List[Message]] = {}
        self._eval_id = 0
        self._req_id = 0
        self._await_req: Optional[int] = None
        self._payload: Optional[Message] = None
        self._await_claim: Optional[int] = None
        self._claim: Optional[Message] = None
        self._woken = False
        self._local: Dict[int, object] = {}
        self._proxies: Dict[int, _GroupProblem] = {}
        self.evaluations = np.zeros(settings.num_levels, dtype=np.int64)
        self.eval_errors = 0
        self.produced = 0

    # message pump ---------------------------------------------------------------

    def _dispatch(self, msg: Message) -> None:
        t = msg.tag
        if t == Tag.Shutdown:
            self.stop_reason = msg["reason"]
        elif t == Tag.ReassignGroup:
            self.reassign = msg
        elif t == Tag.DensityResult:
            self._results.setdefault(msg["eval_id"], []).append(msg)
        elif t == Tag.SamplePayload:
            if msg["req_id"] == self._await_req:
                self._payload = msg
        elif t == Tag.SampleClaimed:
            if msg["reply_to"] == -1:
                self._woken = True
            elif msg["reply_to"] == self._await_claim:
                self._claim = msg
        else:
            raise RoleFailure(f"controller got unexpected {t.name}")

    def _pump(self) -> None:
        self._dispatch(self.ep.recv())

    def _check(self) -> None:
        if self.stop_reason is not None or self.reassign is not None:
            raise _Stop()

    # evaluations ------------------------------------------------------------------

    def _local_problem(self, level: int):
        if level not in self._local:
            self._local[level] = self.factory.sampling_problem(level, GroupComm(self.group, 0, 1))
        return self._local[level]

    def problem(self, level: int) -> _GroupProblem:
        if level not in self._proxies:
            # dimensions are static properties of the level
            p = self.factory.sampling_problem(level)
            self._proxies[level] = _GroupProblem(self, level, p.dim, p.qoi_dim)
        return self._proxies[level]

    def evaluate(self, level: int, what: int, theta) -> np.ndarray:
        self._check()
        theta = np.asarray(theta, dtype=float)
        if what == DENSITY:
            self.evaluations[level] += 1
        if not self.workers:
            err, val = evaluate(self._local_problem(level), what, theta)
        else:
            self._eval_id += 1
            eid = self._eval_id
            # lock step: the request reaches every worker before any reply is used
            for w in self.workers:
                self.ep.send(w, Tag.EvaluateDensity, eval_id=eid, level=level, what=what, theta=theta)
            while len(self._results.get(eid, ())) < len(self.workers):
                self._pump()
                if self.stop_reason not in (None, DONE):
                    raise _Stop()
            replies = sorted(self._results.pop(eid), key=lambda m: m.sender)
            err, val = replies[0]["error"], replies[0]["value"]
            if any(r["error"] != EVAL_OK for r in replies):
                err = EVAL_NONFINITE
        if err != EVAL_OK:
            self.eval_errors += 1
            log.warning("level %d evaluation failed at %s; treated as zero density", level, theta)
            return np.array([-math.inf]) if what == DENSITY else np.full_like(val, math.nan)
        return val

    # phonebook traffic ----------------------------------------------------------------

    def request_sample(self, level: int) -> dict:
        self._check()
        self._req_id += 1
        self._await_req = self._req_id
        self._payload = None
        self.ep.send(PHONEBOOK, Tag.SampleRequest, req_id=self._req_id, level=level, kind=CHAIN, epoch=self.epoch)
        while self._payload is None:
            self._pump()
            if self.stop_reason is not None:
                raise _Stop()
        msg, self._payload, self._await_req = self._payload, None, None
        if msg["status"] == CANCELLED:
            if self.reassign is None and self.stop_reason is None:
                raise RoleFailure("sample request cancelled without reassignment")
            raise _Stop()
        if msg["status"] == NO_PROVIDER:
            raise RoleFailure(f"no provider for level {level}")
        return msg.data

    def announce(self, sample: dict, eligible: bool) -> None:
        self._claim = None
        self._woken = False
        seq = self.ep.send(PHONEBOOK, Tag.SampleReady, epoch=self.epoch, eligible=int(eligible), **sample)
        self._await_claim = seq
        while self._claim is None:
            self._pump()
            if self.stop_reason not in (None, DONE):
                raise _Stop()
        hold = self._claim["hold"]
        self._claim = self._await_claim = None
        self.produced += 1
        if hold:
            self.idle(until_woken=True)

    def idle(self, until_woken: bool = False) -> None:
        while not (until_woken and self._woken):
            self._check()
            self._pump()
        self._woken = False

    # chain lifecycle ---------------------------------------------------------------------

    def _build(self):
        rng = RngStream(self.s.seed, (self.level, self.chain_id))
        f = _GroupFactory(self, self.factory)
        if not self.s.remote:
            return build_chain(f, self.level, rng, self.s.coarse_burn_in)
        problem = self.problem(self.level)
        start = np.asarray(self.factory.starting_point(self.level), dtype=float)
        if self.level == 0:
            return SingleLevelChain(problem, self.factory.proposal(0, problem), start, rng)
        interp = self.factory.interpolation(self.level)
        fine_prop = self.factory.proposal(self.level, problem) if interp.extra_dim else None
        return TwoLevelKernel(problem, _RemoteSource(self, self.level - 1), self.problem(self.level - 1),
                              start, rng, interp, fine_prop)

    def run_chain(self) -> None:
        chain = self._build()
        chain.burn(self.s.burn_in[self.level])
        rate = self.factory.subsampling_rate(self.level) if self.level < self.s.num_levels - 1 else 0
        step = 0
        while self.quota is None or step < self.quota:
            st = chain.advance()
            qoi = ensure_qoi(st, chain.problem).qoi
            cq = chain.last_coarse.get_qoi() if self.level > 0 else np.zeros(0)
            sample = dict(level=self.level, chain=self.chain_id, step=step, accepted=int(st.accepted),
                          log_density=st.log_density, theta=st.position, qoi=qoi, coarse_qoi=cq)
            self.announce(sample, eligible=(step + 1) % (rate + 1) == 0)
            step += 1
        self.idle()

    def run(self) -> int:
        msg = self.ep.recv()
        while msg.tag != Tag.AssignGroup:
            self._dispatch(msg)
            if self.stop_reason is not None:
                return self._finish()
            msg = self.ep.recv()
        self.group = msg["group"]
        self.level, self.chain_id, self.epoch = msg["level"], msg["chain"], msg["epoch"]
        self.workers = [int(w) for w in msg["members"]]
        self.quota = None if self.s.remote else msg["quota"]
        while True:
            try:
                self.run_chain()
            except _Stop:
                pass
            if self.stop_reason is not None:
                return self._finish()
            if self.reassign is not None:
                m, self.reassign = self.reassign, None
                self.level, self.chain_id, self.epoch = m["level"], m["chain"], m["epoch"]
                for w in self.workers:
                    self.ep.send(w, Tag.ReassignGroup, group=m["group"], level=m["level"],
                                 chain=m["chain"], epoch=m["epoch"])

    def _finish(self) -> int:
        for w in self.workers:
            self.ep.send(w, Tag.Shutdown, reason=self.stop_reason or DONE)
        self.ep.send(ROOT, Tag.LoadReport, kind=REPORT_CONTROLLER, evaluations=self.evaluations,
                     samples=self.produced)
        return 0


def controller_loop(ep, factory: HierarchyFactory, settings: RuntimeSettings) -> int:
    return ControllerRole(ep, factory, settings).run()


# --- collector -------------------------------------------------------------------------


def collector_loop(ep, settings: RuntimeSettings) -> int:
    msg = ep.recv()
    while msg.tag != Tag.CollectRequest:
        if msg.tag == Tag.Shutdown:
            return 0
        msg = ep.recv()
    level, shard, quota = msg["level"], msg["shard"], msg["quota"]
    kind = BASE if level == 0 else CORRECTION
    est: Optional[LevelEstimate] = None
    rows: List[np.ndarray] = []
    received = outstanding = 0
    req_id = 0
    shutting = False

    def send_stats(complete: bool):
        e = est
        dim = 0 if e is None else e.dim
        flat = np.concatenate(rows) if rows else np.zeros(0)
        ep.send(ROOT, Tag.CollectedStats, level=level, shard=shard, complete=int(complete),
                count=0 if e is None else e.count, mean=np.zeros(dim) if e is None else e.mean,
                m2=np.zeros(dim) if e is None else e.m2, row_width=rows[0].size if rows else 0, rows=flat)

    if quota == 0:
        send_stats(True)
    done = quota == 0
    while True:
        while not done and not shutting and outstanding < settings.collector_window \
                and received + outstanding < quota:
            req_id += 1
            outstanding += 1
            ep.send(PHONEBOOK, Tag.SampleRequest, req_id=req_id, level=level, kind=COLLECTOR,
                    remaining=quota - received - outstanding)
        msg = ep.recv()
        if msg.tag == Tag.Shutdown:
            if not done:
                send_stats(False)
            return 0
        if msg.tag != Tag.SamplePayload:
            raise RoleFailure(f"collector got unexpected {msg.tag.name}")
        outstanding -= 1
        if msg["status"] != OK:
            if msg["status"] == NO_PROVIDER:
                raise RoleFailure(f"no provider for level {level}")
            shutting = True
            continue
        d = msg.data
        value = d["qoi"] if level == 0 else d["qoi"] - d["coarse_qoi"]
        if est is None:
            est = LevelEstimate.empty(level, kind, value.shape[0])
        est.push(value)
        rows.append(_sample_row(d))
        received += 1
        if received == quota:
            send_stats(True)
            done = True


# --- phonebook --------------------------------------------------------------------------


def phonebook_loop(ep, book: Phonebook, settings: RuntimeSettings, clock=time.monotonic) -> int:
    t0 = clock()    # decision times are reported relative to the phonebook's start
    while True:
        msg = ep.recv(timeout=settings.tick)
        now = clock() - t0
        out = []
        if msg is not None:
            if msg.tag == Tag.Shutdown:
                for to, tag, data in book.cancel_all():
                    ep.send(to, tag, **data)
                dec = np.array([[d.time, d.group, d.source, d.target, d.window] for d in book.decisions]).ravel()
                rts = np.array([math.nan if l.runtime is None else l.runtime for l in book.levels])
                ep.send(ROOT, Tag.LoadReport, kind=REPORT_PHONEBOOK, runtimes=rts, decisions=dec,
                        samples=sum(l.samples_seen for l in book.levels))
                return 0
            out = book.handle(msg, now)
        out += book.rebalance(now)
        for to, tag, data in out:
            ep.send(to, tag, **data)


def idle_loop(ep) -> int:
    while ep.recv().tag != Tag.Shutdown:
        pass
    return 0


# --- root ------------------------------------------------------------------------------------


@dataclass
class LevelOutcome:
    level: int
    estimate: Optional[LevelEstimate]
    rows: np.ndarray
    complete: bool


@dataclass
class RootOutcome:
    status: int                          # 0 ok, 3 role failure, 4 incomplete
    levels: List[LevelOutcome]
    evaluations: np.ndarray
    runtimes: np.ndarray
    decisions: np.ndarray                # rows (time, group, source, target, window)
    samples_announced: int
    wall_time: float
    failure: Optional[str] = None


def _quotas(samples: Sequence[int], layout: Layout, remote: bool) -> Dict[int, int]:
    """Per-controller quota in local mode (None-like -1 in remote mode)."""
    out = {}
    for level in range(len(samples)):
        ctrls = [g for g in layout.groups if g.level == level]
        if not remote and not ctrls and samples[level] > 0:
            raise ValueError(f"local mode needs at least one group on level {level}")
        shares = split_groups(int(samples[level]), max(len(ctrls), 1))
        for g, q in zip(ctrls, shares):
            out[g.controller] = q if not remote else -1
    return out


def root_loop(ep, layout: Layout, settings: RuntimeSettings, clock=time.monotonic) -> RootOutcome:
    t0 = clock()
    quotas = _quotas(settings.samples, layout, settings.remote)
    for g in layout.groups:
        ep.send(g.controller, Tag.AssignGroup, group=g.group, level=g.level, chain=g.chain, epoch=0,
                rank=0, controller=g.controller, members=g.members, quota=max(quotas[g.controller], 0))
        for r, w in enumerate(g.members):
            ep.send(w, Tag.AssignGroup, group=g.group, level=g.level, chain=g.chain, epoch=0,
                    rank=r, controller=g.controller, members=g.members)
    shards = {}
    for level in range(settings.num_levels):
        pids = layout.collector_pids(level)
        for pid, q in zip(pids, split_groups(int(settings.samples[level]), len(pids))):
            ep.send(pid, Tag.CollectRequest, level=level, shard=layout.collectors[pid].shard, quota=q)
            shards[pid] = None
    status, failure = 0, None
    deadline = t0 + settings.timeout
    reports: List[Message] = []

    def absorb(msg):
        nonlocal status, failure
        if msg.tag == Tag.CollectedStats:
            shards[msg.sender] = msg
        elif msg.tag == Tag.LoadReport:
            reports.append(msg)
        elif msg.tag == Tag.Shutdown:
            status, failure = 3, f"process {msg.sender} failed"

    while status == 0 and any(m is None or not m["complete"] for m in shards.values()):
        left = deadline - clock()
        if left <= 0:
            status = 4
            break
        msg = ep.recv(timeout=min(left, 1.0))
        if msg is not None:
            absorb(msg)
    reason = {0: DONE, 3: FAILURE, 4: TIMEOUT}[status]
    ctrls = layout.controllers()
    for pid in ctrls + list(shards):
        ep.send(pid, Tag.Shutdown, reason=reason)
    grace = clock() + (30.0 if status == 0 else 5.0)

    while [p for p in ctrls if p not in {m.sender for m in reports}] and clock() < grace:
        msg = ep.recv(timeout=0.5)
        if msg is not None:
            absorb(msg)
    # partial statistics of unfinished collectors arrive after their shutdown
    while any(m is None or not m["complete"] for m in shards.values()) and clock() < grace and status != 0:
        msg = ep.recv(timeout=0.5)
        if msg is None:
            break
        absorb(msg)
    ep.send(PHONEBOOK, Tag.Shutdown, reason=reason)
    for pid, role in layout.roles.items():
        if isinstance(role, Idle):
            ep.send(pid, Tag.Shutdown, reason=reason)
    pb = None
    while pb is None and clock() < grace + 5.0:
        msg = ep.recv(timeout=0.5)
        if msg is None:
            continue
        absorb(msg)
        if msg.tag == Tag.LoadReport and msg["kind"] == REPORT_PHONEBOOK:
            pb = msg
    evals = np.zeros(settings.num_levels, dtype=np.int64)
    for m in reports:
        if m["kind"] == REPORT_CONTROLLER:
            evals += m["evaluations"]
    levels = []
    for level in range(settings.num_levels):
        est, rows, complete = None, [], True
        for pid in layout.collector_pids(level):
            m = shards[pid]
            if m is None:
                complete = False
                continue
            complete &= bool(m["complete"])
            if m["count"] > 0:
                e = LevelEstimate(level, BASE if level == 0 else CORRECTION, m["count"],
                                  np.array(m["mean"]), np.array(m["m2"]))
                est = e if est is None else merge_statistics(est, e)
                rows.append(m["rows"].reshape(-1, m["row_width"]))
        r = np.concatenate(rows) if rows else np.zeros((0, 0))
        if r.size:
            r = r[np.lexsort((r[:, 1], r[:, 0]))]
        levels.append(LevelOutcome(level, est, r, complete))
    if status == 0 and not all(l.complete for l in levels):
        status = 4
    runtimes = np.array(pb["runtimes"]) if pb is not None else np.full(settings.num_levels, math.nan)
    decisions = np.array(pb["decisions"]).reshape(-1, 5) if pb is not None else np.zeros((0, 5))
    return RootOutcome(status, levels, evals, runtimes, decisions,
                       int(pb["samples"]) if pb is not None else 0, clock() - t0, failure)


# --- dispatch ----------------------------------------------------------------------------------


def run_role(pid: int, ep, layout: Layout, factory: HierarchyFactory, settings: RuntimeSettings,
             book_factory=None) -> int:
    """Run the role of ``pid``; failures are reported to the root."""
    role = layout.roles[pid]
    try:
        if isinstance(role, PhonebookRole):
            expected = [l for l in range(settings.num_levels) if settings.samples[l] > 0]
            book = book_factory() if book_factory else Phonebook(layout, settings.num_levels, settings.remote,
                                                                 settings.scheduler, expected)
            return phonebook_loop(ep, book, settings)
        if isinstance(role, Controller):
            return controller_loop(ep, factory, settings)
        if isinstance(role, Worker):
            return worker_loop(ep, factory, role.group, role.rank)
        if isinstance(role, Collector):
            return collector_loop(ep, settings)
        return idle_loop(ep)
    except Exception:
        log.error("process %d (%s) failed:\n%s", pid, type(role).__name__, traceback.format_exc())
        try:
            ep.send(ROOT, Tag.Shutdown, reason=FAILURE)
        except Exception:
            pass
        return 1

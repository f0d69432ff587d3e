"""Phonebook: directory of sample providers and consumers, load inference
and the dynamic load balancer.

The logic here is transport-free: :meth:`Phonebook.handle` consumes one
message and returns the messages to send, so it can be replayed and
tested deterministically.

Load signals per level: queued sample requests from chains (weighted
``chain_weight``) and from collectors (weighted ``collector_weight``,
capped), samples produced but not yet claimed, and an exponential moving
average of the time controllers need per sample. A level counts as
*needed* while someone is waiting for its samples or, in remote mode,
while a finer level that is itself needed has groups drawing proposals
from it.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, List, Optional, Tuple

from .layout import Layout
from .messages import (CANCELLED, CHAIN, COLLECTOR, NO_PROVIDER, OK, Message, Tag)

Out = Tuple[int, Tag, dict]

_SAMPLE_FIELDS = ("level", "chain", "step", "accepted", "log_density", "theta", "qoi", "coarse_qoi")


@dataclass
class SchedulerConfig:
    hysteresis: float = 4.0
    ema_alpha: float = 0.3
    chain_weight: float = 2.0
    collector_weight: float = 1.0
    collector_cap: int = 4
    store_limit: int = 2          # unclaimed samples a controller may have parked here
    starve_bonus: float = 1000.0  # a needed level without any group
    idle_penalty: float = 1000.0  # a level nobody needs
    load_balancing: bool = True


@dataclass
class StoredSample:
    provider: int
    eligible: bool
    sample: dict


@dataclass
class LevelLoad:
    chain_queue: Deque[Tuple[int, int]] = field(default_factory=deque)      # (pid, req_id)
    collector_queue: Deque[Tuple[int, int]] = field(default_factory=deque)
    ready: Deque[StoredSample] = field(default_factory=deque)
    groups: int = 0
    runtime: Optional[float] = None
    samples_seen: int = 0


@dataclass
class GroupState:
    group: int
    controller: int
    level: int
    chain: int
    epoch: int = 0
    held: bool = False
    release: Optional[float] = None      # when the controller last resumed work
    last_move: Optional[float] = None


@dataclass
class Decision:
    time: float
    group: int
    source: int
    target: int
    window: float


class Phonebook:
    def __init__(self, layout: Layout, num_levels: int, remote: bool,
                 config: Optional[SchedulerConfig] = None, expected_levels=()):
        self.config = config or SchedulerConfig()
        # levels whose collectors have not asked for anything yet; until they
        # do, an empty queue says nothing about demand
        self.unregistered = set(expected_levels)
        self.num_levels = num_levels
        self.remote = remote
        self.levels = [LevelLoad() for _ in range(num_levels)]
        self.groups: Dict[int, GroupState] = {}
        self.by_pid: Dict[int, GroupState] = {}
        for g in layout.groups:
            st = GroupState(g.group, g.controller, g.level, g.chain)
            self.groups[g.group] = st
            self.by_pid[g.controller] = st
            self.levels[g.level].groups += 1
        self.next_chain = [0] * num_levels
        for g in layout.groups:
            self.next_chain[g.level] = max(self.next_chain[g.level], g.chain + 1)
        self.stored: Dict[Tuple[int, int], int] = {}     # (provider, level) -> parked samples
        # samples each collector still wants beyond its queued requests
        self.collector_left: List[Dict[int, int]] = [{} for _ in range(num_levels)]
        self.decisions: List[Decision] = []
        self._last_into: Dict[int, float] = {}

    # --- signals ----------------------------------------------------------

    def collectors_done(self, level: int) -> bool:
        return (level not in self.unregistered and not self.levels[level].collector_queue
                and not any(self.collector_left[level].values()))

    def needed(self, level: int) -> bool:
        ld = self.levels[level]
        if ld.chain_queue or not self.collectors_done(level):
            return True
        if self.remote and level + 1 < self.num_levels and self.levels[level + 1].groups > 0:
            return self.needed(level + 1)
        return False

    def score(self, level: int) -> float:
        c = self.config
        ld = self.levels[level]
        s = (c.chain_weight * len(ld.chain_queue)
             + c.collector_weight * min(len(ld.collector_queue), c.collector_cap)
             - len(ld.ready))
        if not self.needed(level):
            s -= c.idle_penalty
        elif ld.groups == 0:
            s += c.starve_bonus
        return s

    def runtime(self, level: int) -> float:
        rt = self.levels[level].runtime
        if rt is not None:
            return rt
        known = [l.runtime for l in self.levels if l.runtime is not None]
        return max(known) if known else 0.0

    # --- message handling -------------------------------------------------------

    def handle(self, msg: Message, now: float) -> List[Out]:
        if msg.tag == Tag.SampleRequest:
            return self._on_request(msg, now)
        if msg.tag == Tag.SampleReady:
            return self._on_ready(msg, now)
        raise ValueError(f"phonebook cannot handle {msg.tag.name}")

    def _payload(self, req_id: int, stored: StoredSample, status: int = OK) -> dict:
        d = {k: stored.sample[k] for k in _SAMPLE_FIELDS}
        d.update(req_id=req_id, status=status, provider=stored.provider)
        return d

    def _take(self, level: int, chain_only: bool) -> Optional[StoredSample]:
        ready = self.levels[level].ready
        for i, s in enumerate(ready):
            if s.eligible or not chain_only:
                del ready[i]
                key = (s.provider, level)
                self.stored[key] -= 1
                return s
        return None

    def _purge(self, level: int) -> None:
        # once the collectors are served only proposal-eligible samples are of use
        if not (self.remote and self.collectors_done(level)):
            return
        ld = self.levels[level]
        for s in [s for s in ld.ready if not s.eligible]:
            ld.ready.remove(s)
            self.stored[(s.provider, level)] -= 1

    def _wake(self, st: GroupState, now: float) -> List[Out]:
        st.held = False
        st.release = now
        return [(st.controller, Tag.SampleClaimed, {"reply_to": -1, "hold": 0})]

    def _on_request(self, msg: Message, now: float) -> List[Out]:
        level, kind, req_id = msg["level"], msg["kind"], msg["req_id"]
        if not 0 <= level < self.num_levels:
            return [(msg.sender, Tag.SamplePayload, {"req_id": req_id, "status": NO_PROVIDER, "level": level})]
        if kind == CHAIN:
            st = self.by_pid.get(msg.sender)
            if st is not None and msg["epoch"] != st.epoch:
                return [(msg.sender, Tag.SamplePayload, {"req_id": req_id, "status": CANCELLED, "level": level})]
        else:
            self.unregistered.discard(level)
            self.collector_left[level][msg.sender] = msg["remaining"]
        out: List[Out] = []
        got = self._take(level, chain_only=(kind == CHAIN))
        if got is not None:
            out.append((msg.sender, Tag.SamplePayload, self._payload(req_id, got)))
            prov = self.by_pid.get(got.provider)
            if prov is not None and prov.held:
                out += self._wake(prov, now)
            self._purge(level)
            return out
        ld = self.levels[level]
        (ld.chain_queue if kind == CHAIN else ld.collector_queue).append((msg.sender, req_id))
        for st in self.groups.values():
            if st.level == level and st.held:
                out += self._wake(st, now)
        return out

    def _on_ready(self, msg: Message, now: float) -> List[Out]:
        st = self.by_pid[msg.sender]
        level = msg["level"]
        reply = {"reply_to": msg.seq, "hold": 0}
        if msg["epoch"] != st.epoch or level != st.level:
            # produced before a reassignment reached the controller
            return [(msg.sender, Tag.SampleClaimed, reply)]
        ld = self.levels[level]
        ld.samples_seen += 1
        if st.release is not None:
            dt = now - st.release
            a = self.config.ema_alpha
            ld.runtime = dt if ld.runtime is None else a * dt + (1 - a) * ld.runtime
        sample = {k: msg[k] for k in _SAMPLE_FIELDS}
        stored = StoredSample(msg.sender, bool(msg["eligible"]), sample)
        out: List[Out] = []
        if stored.eligible and ld.chain_queue:
            pid, req = ld.chain_queue.popleft()
            out.append((pid, Tag.SamplePayload, self._payload(req, stored)))
        elif ld.collector_queue:
            pid, req = ld.collector_queue.popleft()
            out.append((pid, Tag.SamplePayload, self._payload(req, stored)))
            self._purge(level)
        elif not self.remote or (self.needed(level) and (stored.eligible or not self.collectors_done(level))):
            # local-mode controllers have fixed quotas, so nothing may be dropped
            ld.ready.append(stored)
            key = (msg.sender, level)
            self.stored[key] = self.stored.get(key, 0) + 1
        waiting = bool(ld.chain_queue or ld.collector_queue)
        hold = ((self.stored.get((msg.sender, level), 0) >= self.config.store_limit and not waiting)
                or (self.remote and not self.needed(level)))
        reply["hold"] = int(hold)
        st.held = hold
        st.release = None if hold else now
        out.insert(0, (msg.sender, Tag.SampleClaimed, reply))
        return out

    # --- scheduling ---------------------------------------------------------------

    def rebalance(self, now: float) -> List[Out]:
        """At most one group move per call (see module docstring)."""
        if not (self.config.load_balancing and self.remote) or self.num_levels < 2 or self.unregistered:
            return []
        scores = [self.score(l) for l in range(self.num_levels)]
        needed = [l for l in range(self.num_levels) if self.needed(l)]
        if not needed:
            return []
        target = max(needed, key=lambda l: (scores[l], l))
        sources = [l for l in range(self.num_levels) if l != target and
                   (self.levels[l].groups >= 2 or (self.levels[l].groups >= 1 and l not in needed))]
        if not sources:
            return []
        source = min(sources, key=lambda l: (scores[l], -l))
        if scores[target] - scores[source] <= self.config.hysteresis:
            return []
        window = max(self.runtime(source), self.runtime(target))
        last = self._last_into.get(target)
        if last is not None and now - last < window:
            return []
        cands = [g for g in self.groups.values() if g.level == source and
                 (g.last_move is None or now - g.last_move >= window)]
        if not cands:
            return []
        g = min(cands, key=lambda g: (not g.held, g.group))
        return self.reassign(g.group, target, now, window)

    def reassign(self, group: int, target: int, now: float, window: float = 0.0) -> List[Out]:
        st = self.groups[group]
        source = st.level
        out: List[Out] = []
        # requests the controller queued for its old role will never be collected
        for ld in self.levels:
            keep = deque()
            for pid, req in ld.chain_queue:
                if pid == st.controller:
                    out.append((pid, Tag.SamplePayload, {"req_id": req, "status": CANCELLED}))
                else:
                    keep.append((pid, req))
            ld.chain_queue = keep
        self.levels[source].groups -= 1
        self.levels[target].groups += 1
        st.level = target
        st.chain = self.next_chain[target]
        self.next_chain[target] += 1
        st.epoch += 1
        st.held = False
        st.release = None
        st.last_move = now
        self._last_into[target] = now
        self.decisions.append(Decision(now, group, source, target, window))
        out.insert(0, (st.controller, Tag.ReassignGroup,
                       {"group": group, "level": target, "chain": st.chain, "epoch": st.epoch}))
        return out

    def cancel_all(self) -> List[Out]:
        """Answer every queued request with a cancellation (at shutdown)."""
        out = []
        for ld in self.levels:
            for q in (ld.chain_queue, ld.collector_queue):
                while q:
                    pid, req = q.popleft()
                    out.append((pid, Tag.SamplePayload, {"req_id": req, "status": CANCELLED}))
        return out

    def ledger(self) -> List[dict]:
        """Snapshot of the per-level load signals."""
        return [{"chain_requests": len(l.chain_queue), "collector_requests": len(l.collector_queue),
                 "ready": len(l.ready), "groups": l.groups, "runtime": l.runtime}
                for l in self.levels]


def phonebook_handle(book: Phonebook, msg: Message, now: float) -> Tuple[Phonebook, List[Out]]:
    """Functional wrapper: (ledger, message) -> (ledger, outgoing)."""
    return book, book.handle(msg, now)


def throttle_violations(decisions) -> List[Tuple[int, float, float]]:
    """Moves of a group that follow its previous move by less than the
    runtime window in force at that time: (group, gap, window) triples.
    ``decisions`` holds Decision objects or (time, group, source, target,
    window) rows."""
    last: Dict[int, float] = {}
    out = []
    rows = [(d.time, d.group, d.window) if isinstance(d, Decision) else (d[0], int(d[1]), d[4])
            for d in decisions]
    for t, g, window in sorted(rows):
        if g in last and t - last[g] < window:
            out.append((g, t - last[g], window))
        last[g] = t
    return out

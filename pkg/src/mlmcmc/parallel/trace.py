"""Message trace recording and audits.

One record per sent message: ``timestamp_ns,sender,receiver,tag,seq``.
"""

from __future__ import annotations

import csv
import threading
import time
from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Tuple

from .messages import Tag

HEADER = ("timestamp_ns", "sender", "receiver", "tag", "seq")


@dataclass(frozen=True)
class TraceEvent:
    timestamp_ns: int
    sender: int
    receiver: int
    tag: str
    seq: int


class TraceRecorder:
    """Thread-safe in-memory event list."""

    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self._events: List[TraceEvent] = []
        self._lock = threading.Lock()

    def record(self, sender: int, receiver: int, tag: Tag, seq: int, timestamp_ns: Optional[int] = None):
        if not self.enabled:
            return
        t = time.monotonic_ns() if timestamp_ns is None else timestamp_ns
        with self._lock:
            self._events.append(TraceEvent(t, sender, receiver, Tag(tag).name, seq))

    @property
    def events(self) -> List[TraceEvent]:
        with self._lock:
            return sorted(self._events, key=lambda e: (e.timestamp_ns, e.sender, e.receiver, e.seq))

    def write(self, path) -> None:
        write_trace(path, self.events)


def write_trace(path, events: Iterable[TraceEvent]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HEADER)
        for e in events:
            w.writerow((e.timestamp_ns, e.sender, e.receiver, e.tag, e.seq))


def read_trace(path) -> List[TraceEvent]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        head = next(r)
        if tuple(head) != HEADER:
            raise ValueError(f"{path}: unexpected trace header {head}")
        return [TraceEvent(int(a), int(b), int(c), d, int(e)) for a, b, c, d, e in r]


def check_sequence_numbers(events: Iterable[TraceEvent]) -> List[str]:
    """Sequence numbers must strictly increase per (sender, receiver)."""
    last: Dict[Tuple[int, int], int] = {}
    problems = []
    for e in sorted(events, key=lambda e: e.timestamp_ns):
        key = (e.sender, e.receiver)
        if key in last and e.seq <= last[key]:
            problems.append(f"seq {e.seq} after {last[key]} on {key}")
        last[key] = e.seq
    return problems


def unanswered(events: Iterable[TraceEvent], request: str, response: str) -> List[TraceEvent]:
    """Requests from A to B without a later response from B to A.

    Responses are matched to requests in order per pair. Cancellation is
    itself a response (e.g. a SamplePayload with a cancelled status), so a
    clean run leaves this list empty.
    """
    evs = sorted(events, key=lambda e: e.timestamp_ns)
    open_req: Dict[Tuple[int, int], List[TraceEvent]] = defaultdict(list)
    for e in evs:
        if e.tag == request:
            open_req[(e.sender, e.receiver)].append(e)
        elif e.tag == response and open_req[(e.receiver, e.sender)]:
            open_req[(e.receiver, e.sender)].pop(0)
    return [r for reqs in open_req.values() for r in reqs]


def reassignment_times(events: Iterable[TraceEvent]) -> Dict[int, List[int]]:
    """Timestamps of ReassignGroup messages per receiving controller."""
    out: Dict[int, List[int]] = defaultdict(list)
    for e in sorted(events, key=lambda e: e.timestamp_ns):
        if e.tag == Tag.ReassignGroup.name:
            out[e.receiver].append(e.timestamp_ns)
    return dict(out)

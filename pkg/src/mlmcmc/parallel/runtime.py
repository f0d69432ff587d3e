"""Launches all roles of a run on the chosen transport and returns the
root's outcome."""

from __future__ import annotations

import logging
import multiprocessing as mp
import threading
from dataclasses import dataclass, field
from typing import Callable, List, Optional

from ..hierarchy import HierarchyFactory
from .layout import Layout, LayoutConfig, assign_roles, minimum_processes
from .roles import RootOutcome, RuntimeSettings, root_loop, run_role
from .trace import TraceEvent, TraceRecorder
from .transport import InProcessTransport, SocketEndpoint, SocketHub

log = logging.getLogger(__name__)

TRANSPORTS = ("inprocess", "socket")


@dataclass
class RunOutcome:
    root: RootOutcome
    layout: Layout
    trace: List[TraceEvent] = field(default_factory=list)

    @property
    def status(self) -> int:
        return self.root.status


def _socket_child(pid: int, address, layout: Layout, builder: Callable[[], HierarchyFactory],
                  settings: RuntimeSettings) -> None:
    ep = SocketEndpoint(pid, address)
    try:
        run_role(pid, ep, layout, builder(), settings)
    finally:
        ep.close()


def run_runtime(builder: Callable[[], HierarchyFactory], settings: RuntimeSettings,
                layout_config: LayoutConfig, processes: Optional[int] = None,
                transport: str = "inprocess", trace: bool = True, wire_check: bool = False) -> RunOutcome:
    """Run every role to completion.

    ``builder`` constructs the model factory; with the socket transport it
    is called once in every child process, so it must be picklable (a
    module-level function or a ``functools.partial`` of one).
    """
    if transport not in TRANSPORTS:
        raise ValueError(f"unknown transport {transport!r}; choose from {TRANSPORTS}")
    if processes is None:
        groups = layout_config.groups if layout_config.groups is not None else settings.num_levels
        processes = minimum_processes(layout_config, groups)
    layout = assign_roles(processes, layout_config)
    recorder = TraceRecorder(enabled=trace)
    if transport == "inprocess":
        factory = builder()
        # warm shared caches (e.g. a MAP search) before threads race for them
        factory.starting_point(0)
        t = InProcessTransport(processes, recorder, wire_check=wire_check)
        threads = []
        for pid in range(1, processes):
            th = threading.Thread(target=run_role, args=(pid, t.endpoint(pid), layout, factory, settings),
                                  name=f"role-{pid}", daemon=True)
            th.start()
            threads.append(th)
        outcome = root_loop(t.endpoint(0), layout, settings)
        for th in threads:
            th.join(timeout=10.0)
        alive = [th.name for th in threads if th.is_alive()]
        if alive:
            log.warning("roles still running after shutdown: %s", alive)
        return RunOutcome(outcome, layout, recorder.events)
    hub = SocketHub(recorder)
    ctx = mp.get_context("spawn")
    procs = [ctx.Process(target=_socket_child, args=(pid, hub.address, layout, builder, settings),
                         name=f"role-{pid}", daemon=True) for pid in range(1, processes)]
    for p in procs:
        p.start()
    ep = SocketEndpoint(0, hub.address)
    try:
        outcome = root_loop(ep, layout, settings)
    finally:
        for p in procs:
            p.join(timeout=10.0)
            if p.is_alive():
                p.terminate()
        ep.close()
        hub.close()
    return RunOutcome(outcome, layout, recorder.events)

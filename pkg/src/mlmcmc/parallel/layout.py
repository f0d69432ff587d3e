"""Static process layout: which process plays which role at start-up."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union


@dataclass(frozen=True)
class Root:
    pass


@dataclass(frozen=True)
class Phonebook:
    pass


@dataclass(frozen=True)
class Controller:
    level: int
    chain: int
    group: int


@dataclass(frozen=True)
class Worker:
    group: int
    rank: int


@dataclass(frozen=True)
class Collector:
    level: int
    shard: int


@dataclass(frozen=True)
class Idle:
    pass


Role = Union[Root, Phonebook, Controller, Worker, Collector, Idle]


@dataclass
class LayoutConfig:
    """``collectors`` is the shard count per level; ``initial_groups`` the
    number of groups starting on each level (default: an even split with
    the remainder on the coarsest levels). ``groups=None`` uses every
    process left after the fixed roles."""

    num_levels: int
    group_size: int = 1
    groups: Optional[int] = None
    collectors: Sequence[int] = ()
    initial_groups: Sequence[int] = ()

    def collectors_per_level(self) -> List[int]:
        c = list(self.collectors) or [1] * self.num_levels
        if len(c) != self.num_levels:
            raise ValueError(f"collectors lists {len(c)} levels, expected {self.num_levels}")
        return c


@dataclass
class GroupInfo:
    group: int
    controller: int
    members: List[int]       # worker process ids (empty when the group size is 1)
    level: int
    chain: int


@dataclass
class Layout:
    roles: Dict[int, Role]
    groups: List[GroupInfo]
    collectors: Dict[int, Collector] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return len(self.roles)

    def controllers(self) -> List[int]:
        return [g.controller for g in self.groups]

    def collector_pids(self, level: Optional[int] = None) -> List[int]:
        return [p for p, c in self.collectors.items() if level is None or c.level == level]


def minimum_processes(cfg: LayoutConfig, groups: int = 1) -> int:
    return 2 + sum(cfg.collectors_per_level()) + groups * cfg.group_size


def split_groups(groups: int, num_levels: int) -> List[int]:
    base, extra = divmod(groups, num_levels)
    return [base + (1 if l < extra else 0) for l in range(num_levels)]


def assign_roles(total: int, cfg: LayoutConfig) -> Layout:
    """Process 0 is the root, 1 the phonebook, then the collectors (level
    by level), then groups of ``group_size`` processes (controller first,
    workers after). Processes that do not fill a whole group stay idle."""
    if cfg.group_size < 1:
        raise ValueError("group size must be at least 1")
    coll = cfg.collectors_per_level()
    fixed = 2 + sum(coll)
    avail = total - fixed
    ngroups = avail // cfg.group_size if cfg.groups is None else cfg.groups
    need = fixed + max(ngroups, 1) * cfg.group_size
    if ngroups < 1 or total < need:
        raise ValueError(f"{total} processes are too few for this layout; at least {need} are required "
                         f"(root, phonebook, {sum(coll)} collectors, "
                         f"{max(ngroups, 1)} group(s) of {cfg.group_size})")
    init = list(cfg.initial_groups) or split_groups(ngroups, cfg.num_levels)
    if len(init) != cfg.num_levels or sum(init) != ngroups or min(init) < 0:
        raise ValueError(f"initial group distribution {init} does not split {ngroups} groups "
                         f"over {cfg.num_levels} levels")
    roles: Dict[int, Role] = {0: Root(), 1: Phonebook()}
    collectors = {}
    pid = 2
    for level, n in enumerate(coll):
        for shard in range(n):
            collectors[pid] = Collector(level, shard)
            roles[pid] = collectors[pid]
            pid += 1
    levels = [l for l, n in enumerate(init) for _ in range(n)]
    chain_counter = [0] * cfg.num_levels
    groups = []
    for g, level in enumerate(levels):
        ctrl = pid
        roles[ctrl] = Controller(level, chain_counter[level], g)
        members = []
        for r in range(1, cfg.group_size):
            roles[ctrl + r] = Worker(g, r - 1)
            members.append(ctrl + r)
        groups.append(GroupInfo(g, ctrl, members, level, chain_counter[level]))
        chain_counter[level] += 1
        pid += cfg.group_size
    while pid < total:
        roles[pid] = Idle()
        pid += 1
    return Layout(roles, groups, collectors)

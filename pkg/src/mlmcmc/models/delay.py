"""Gaussian target with an artificial, level-dependent evaluation time.

Every level has the same posterior, so sampling statistics stay checkable
against closed forms while the scheduler sees heterogeneous runtimes.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..hierarchy import GroupComm, HierarchyFactory, SamplingProblem
from ..probability import AdaptiveMetropolis, GaussianDensity, GaussianRandomWalk, log_gaussian_density


@dataclass
class DelayModelSpec:
    runtimes: Sequence[float]           # mean seconds per evaluation, one per level
    jitter: float = 0.1                 # relative half-width of the uniform jitter
    mean: Sequence[float] = (0.0,)
    cov: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if any(r < 0 for r in self.runtimes):
            raise ValueError("runtimes must be non-negative")
        if not 0.0 <= self.jitter < 1.0:
            raise ValueError("jitter must lie in [0, 1)")


class DelayProblem(SamplingProblem):
    """Sleeps ``runtime * U(1 - jitter, 1 + jitter)`` then evaluates a Gaussian."""

    def __init__(self, target: GaussianDensity, runtime: float, jitter: float = 0.1,
                 seed=0, sleep=time.sleep):
        self.target = target
        self.dim = target.dim
        self.qoi_dim = target.dim
        self.runtime = float(runtime)
        self.jitter = float(jitter)
        # jitter has its own generator so it never touches sampling streams
        self._jit = np.random.default_rng(seed)
        self._sleep = sleep
        self.evaluations = 0

    def delay(self) -> float:
        if self.runtime <= 0.0:
            return 0.0
        return self.runtime * self._jit.uniform(1.0 - self.jitter, 1.0 + self.jitter)

    def log_density(self, theta) -> float:
        self.evaluations += 1
        d = self.delay()
        if d > 0.0:
            self._sleep(d)
        return log_gaussian_density(theta, self.target)

    def qoi(self, theta) -> np.ndarray:
        return np.array(theta, dtype=float)


class DelayHierarchy(HierarchyFactory):
    def __init__(self, spec: DelayModelSpec, subsampling: Sequence[int] = (), proposal_cov=1.0,
                 am_interval: int = 100, am_eps: float = 1e-6, adaptive: bool = True):
        self.spec = spec
        self.target = GaussianDensity(np.atleast_1d(np.asarray(spec.mean, dtype=float)), spec.cov)
        self.dim = self.target.dim
        n = len(spec.runtimes)
        self.subsampling = list(subsampling) + [0] * (n - len(subsampling))
        self.proposal_cov = proposal_cov
        self.am_interval = am_interval
        self.am_eps = am_eps
        self.adaptive = adaptive

    def finest_index(self) -> int:
        return len(self.spec.runtimes) - 1

    def sampling_problem(self, level: int, comm: Optional[GroupComm] = None) -> DelayProblem:
        g = comm.group if comm is not None else 0
        r = comm.rank if comm is not None else 0
        seed = np.random.SeedSequence([self.spec.seed, level, g, r])
        return DelayProblem(self.target, self.spec.runtimes[level], self.spec.jitter, seed)

    def proposal(self, level: int, problem):
        if self.adaptive:
            return AdaptiveMetropolis(self.proposal_cov, self.dim, self.am_interval, self.am_eps)
        return GaussianRandomWalk(self.proposal_cov, self.dim)

    def starting_point(self, level: int) -> np.ndarray:
        return self.target.mean.copy()

    def subsampling_rate(self, level: int) -> int:
        return int(self.subsampling[level])


def delay_model_problem(level: int, spec: DelayModelSpec) -> DelayProblem:
    return DelayHierarchy(spec).sampling_problem(level)

"""The model interface users implement: per-level sampling problems and the
factory that assembles a level hierarchy.

To add a forward model, subclass :class:`SamplingProblem` (or
:class:`BayesianProblem`) and :class:`HierarchyFactory`. The runtime builds
problems through ``factory.sampling_problem(level, comm)``; ``comm`` is a
:class:`GroupComm` describing the worker group that evaluates the problem, so
models that split an evaluation across a group can use it. Problems are never
evaluated concurrently from two chains.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional

import numpy as np

NEG_INF = -math.inf


@dataclass(frozen=True)
class GroupComm:
    """Handle of the worker group a problem instance lives on."""

    group: int = 0
    rank: int = 0
    size: int = 1


class SamplingProblem(ABC):
    """Unnormalised log-posterior and quantity of interest on one level."""

    dim: int
    qoi_dim: int

    @abstractmethod
    def log_density(self, theta: np.ndarray) -> float:
        ...

    @abstractmethod
    def qoi(self, theta: np.ndarray) -> np.ndarray:
        ...


class BayesianProblem(SamplingProblem):
    """Posterior stored as a (log-likelihood, log-prior) pair and summed on
    evaluation. Outside the prior support the likelihood is not evaluated."""

    @abstractmethod
    def log_likelihood(self, theta: np.ndarray) -> float:
        ...

    @abstractmethod
    def log_prior(self, theta: np.ndarray) -> float:
        ...

    def log_density(self, theta: np.ndarray) -> float:
        lp = self.log_prior(theta)
        if lp == NEG_INF:
            return NEG_INF
        return self.log_likelihood(theta) + lp


def log_posterior(problem: SamplingProblem, theta) -> float:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (problem.dim,):
        raise ValueError(f"parameter has shape {theta.shape}, problem dimension is {problem.dim}")
    value = float(problem.log_density(theta))
    return NEG_INF if math.isnan(value) else value


@dataclass(frozen=True)
class Interpolation:
    """Combines a coarse parameter with extra fine components.

    Coarse components come first; with equal dimensions this is the identity.
    """

    coarse_dim: int
    fine_dim: int

    def __post_init__(self):
        if self.fine_dim < self.coarse_dim:
            raise ValueError("fine dimension must not be smaller than the coarse dimension")

    @property
    def extra_dim(self) -> int:
        return self.fine_dim - self.coarse_dim

    def combine(self, coarse, fine_extra) -> np.ndarray:
        coarse = np.asarray(coarse, dtype=float)
        fine_extra = np.asarray(fine_extra, dtype=float).reshape(-1)
        if coarse.shape != (self.coarse_dim,) or fine_extra.shape != (self.extra_dim,):
            raise ValueError(
                f"expected coarse/extra dims {self.coarse_dim}/{self.extra_dim}, "
                f"got {coarse.shape[0] if coarse.ndim else 0}/{fine_extra.shape[0]}"
            )
        if self.extra_dim == 0:
            return coarse
        return np.concatenate([coarse, fine_extra])

    def split(self, fine):
        fine = np.asarray(fine, dtype=float)
        if fine.shape != (self.fine_dim,):
            raise ValueError(f"expected fine dim {self.fine_dim}, got {fine.shape}")
        return fine[: self.coarse_dim], fine[self.coarse_dim:]


def interpolate(coarse, fine_extra, interpolation: Interpolation) -> np.ndarray:
    return interpolation.combine(coarse, fine_extra)


class HierarchyFactory(ABC):
    """Builds everything the multilevel sampler needs for levels
    ``0..finest_index()``."""

    @abstractmethod
    def sampling_problem(self, level: int, comm: Optional[GroupComm] = None) -> SamplingProblem:
        ...

    @abstractmethod
    def finest_index(self) -> int:
        ...

    @abstractmethod
    def proposal(self, level: int, problem: SamplingProblem):
        """Proposal for the coarsest chain (level 0) or for the extra fine
        components on level > 0 (``None`` if there are none)."""

    @abstractmethod
    def starting_point(self, level: int) -> np.ndarray:
        ...

    def subsampling_rate(self, level: int) -> int:
        """Coarse steps discarded between two proposals that chains on
        ``level`` hand to ``level + 1``."""
        return 0

    def interpolation(self, level: int) -> Interpolation:
        fine = self.sampling_problem(level).dim
        coarse = self.sampling_problem(level - 1).dim
        return Interpolation(coarse, fine)

    @property
    def num_levels(self) -> int:
        return self.finest_index() + 1


def check_hierarchy(factory: HierarchyFactory) -> None:
    """Validate dimensions and starting points of every level."""
    prev_dim = 0
    qoi_dim = None
    for level in range(factory.num_levels):
        problem = factory.sampling_problem(level)
        if problem.dim < prev_dim:
            raise ValueError(f"parameter dimension decreases at level {level}")
        if qoi_dim is not None and problem.qoi_dim != qoi_dim:
            raise ValueError(f"QOI dimension changes at level {level}")
        start = factory.starting_point(level)
        if log_posterior(problem, start) == NEG_INF:
            raise ValueError(f"starting point of level {level} has zero density")
        prev_dim, qoi_dim = problem.dim, problem.qoi_dim

"""Analytic Gaussian hierarchy used as an oracle model."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from ..hierarchy import BayesianProblem, GroupComm, HierarchyFactory
from ..probability import AdaptiveMetropolis, GaussianDensity, GaussianRandomWalk, log_gaussian_density


class GaussianLevelProblem(BayesianProblem):
    """Gaussian prior times an optional Gaussian likelihood y ~ N(theta, noise).

    With no likelihood the posterior is the prior itself. ``qoi(theta) = theta``.
    """

    def __init__(self, prior: GaussianDensity, data=None, noise: Optional[GaussianDensity] = None):
        self.prior = prior
        self.dim = prior.dim
        self.qoi_dim = prior.dim
        self.data = None if data is None else np.asarray(data, dtype=float)
        self.noise = noise

    def log_prior(self, theta) -> float:
        return log_gaussian_density(theta, self.prior)

    def log_likelihood(self, theta) -> float:
        if self.data is None:
            return 0.0
        return log_gaussian_density(self.data - theta, self.noise)

    def log_density(self, theta) -> float:
        if self.data is None:
            return log_gaussian_density(theta, self.prior)
        return self.log_likelihood(theta) + self.log_prior(theta)

    def qoi(self, theta) -> np.ndarray:
        return np.array(theta, dtype=float)

    def posterior(self) -> GaussianDensity:
        """Closed-form (conjugate) posterior."""
        if self.data is None:
            return self.prior
        c0 = np.atleast_2d(np.diag(self.prior.cov)) if self.prior.diag is not None else self.prior.cov
        g = np.diag(self.noise.cov) if self.noise.diag is not None else self.noise.cov
        p0 = np.linalg.inv(c0)
        pg = np.linalg.inv(g)
        cov = np.linalg.inv(p0 + pg)
        cov = 0.5 * (cov + cov.T)
        mean = cov @ (p0 @ self.prior.mean + pg @ self.data)
        return GaussianDensity(mean, cov)


class GaussianHierarchy(HierarchyFactory):
    """Levels with explicit Gaussian posteriors N(means[l], covs[l]).

    Level 0 uses Adaptive Metropolis started from ``proposal_cov``; finer
    levels have the same dimension, so they need no fine proposal.
    """

    def __init__(self, means: Sequence, covs: Sequence, subsampling: Sequence[int] = (),
                 proposal_cov=1.0, am_interval: int = 100, am_eps: float = 1e-6,
                 adaptive: bool = True, start=None, likelihoods: Optional[Sequence] = None):
        self.means = [np.atleast_1d(np.asarray(m, dtype=float)) for m in means]
        self.covs = [np.asarray(c, dtype=float) for c in covs]
        if len(self.means) != len(self.covs) or not self.means:
            raise ValueError("need one mean and one covariance per level")
        dims = {m.shape[0] for m in self.means}
        if len(dims) != 1:
            raise ValueError("all levels must share one parameter dimension")
        self.dim = dims.pop()
        self.subsampling = list(subsampling) + [0] * (len(self.means) - len(subsampling))
        self.proposal_cov = proposal_cov
        self.am_interval = am_interval
        self.am_eps = am_eps
        self.adaptive = adaptive
        self.start = np.zeros(self.dim) if start is None else np.asarray(start, dtype=float)
        # optional (data, noise_cov) pairs turning level l into prior x likelihood
        self.likelihoods = likelihoods
        self._densities = [GaussianDensity(m, c) for m, c in zip(self.means, self.covs)]

    @classmethod
    def identical(cls, levels: int, dim: int = 1, mean=0.0, cov=1.0, **kw) -> "GaussianHierarchy":
        m = np.full(dim, mean, dtype=float) if np.ndim(mean) == 0 else np.asarray(mean, dtype=float)
        return cls([m] * levels, [cov] * levels, **kw)

    @classmethod
    def converging(cls, levels: int, target, cov=1.0, **kw) -> "GaussianHierarchy":
        """Means mu_l = (1 - 2^-l) * target."""
        target = np.atleast_1d(np.asarray(target, dtype=float))
        means = [(1.0 - 2.0 ** (-l)) * target for l in range(levels)]
        return cls(means, [cov] * levels, **kw)

    def finest_index(self) -> int:
        return len(self.means) - 1

    def sampling_problem(self, level: int, comm: Optional[GroupComm] = None) -> GaussianLevelProblem:
        if self.likelihoods is not None:
            data, noise_cov = self.likelihoods[level]
            return GaussianLevelProblem(self._densities[level], data,
                                        GaussianDensity(np.zeros(self.dim), noise_cov))
        return GaussianLevelProblem(self._densities[level])

    def posterior_mean(self, level: Optional[int] = None) -> np.ndarray:
        level = self.finest_index() if level is None else level
        return self.sampling_problem(level).posterior().mean

    def proposal(self, level: int, problem):
        if self.adaptive:
            return AdaptiveMetropolis(self.proposal_cov, self.dim, self.am_interval, self.am_eps)
        return GaussianRandomWalk(self.proposal_cov, self.dim)

    def subsampling_rate(self, level: int) -> int:
        return int(self.subsampling[level])

    def starting_point(self, level: int) -> np.ndarray:
        return self.start.copy()

"""Gaussian densities, reproducible random streams and Adaptive Metropolis."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


class RngStream:
    """A reproducible random stream identified by ``(seed, stream)``.

    Streams are backed by the counter-based Philox generator keyed through
    :class:`numpy.random.SeedSequence`, so streams with distinct ids are
    statistically independent while identical ids replay identical draws.
    ``stream`` may be a single integer or a tuple of integers (e.g.
    ``(role, level, chain)``).
    """

    def __init__(self, seed: int, stream: Union[int, Sequence[int]] = 0):
        if isinstance(stream, (int, np.integer)):
            stream = (int(stream),)
        self.seed = int(seed)
        self.stream = tuple(int(s) for s in stream)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.stream)
        self.gen = np.random.Generator(np.random.Philox(ss))

    def spawn(self, *ids: int) -> "RngStream":
        """Derive an independent child stream."""
        return RngStream(self.seed, self.stream + tuple(ids))

    def normal(self, size=None):
        return self.gen.standard_normal(size)

    def uniform(self) -> float:
        return float(self.gen.random())

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream={self.stream})"


@dataclass(frozen=True, eq=False)
class GaussianDensity:
    """Multivariate normal N(mean, cov).

    ``cov`` may be a full matrix, a 1-D array (diagonal) or a scalar
    (isotropic). Construction fails unless the covariance is symmetric and
    positive definite.
    """

    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray = field(init=False, repr=False)
    precision: Optional[np.ndarray] = field(init=False, repr=False)
    diag: Optional[np.ndarray] = field(init=False, repr=False)
    log_norm: float = field(init=False, repr=False)

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        d = mean.shape[0]
        cov = np.asarray(self.cov, dtype=float)
        if cov.ndim == 0:
            cov = np.full(d, float(cov))
        object.__setattr__(self, "mean", mean)
        if cov.ndim == 1:
            if cov.shape != (d,):
                raise ValueError(f"diagonal covariance has length {cov.shape[0]}, expected {d}")
            if not np.all(cov > 0) or not np.all(np.isfinite(cov)):
                raise ValueError("covariance is not positive definite")
            object.__setattr__(self, "cov", cov)
            object.__setattr__(self, "diag", cov)
            object.__setattr__(self, "chol", np.sqrt(cov))
            object.__setattr__(self, "precision", None)
            object.__setattr__(self, "log_norm", -0.5 * (d * LOG_2PI + float(np.sum(np.log(cov)))))
            return
        if cov.shape != (d, d):
            raise ValueError(f"covariance has shape {cov.shape}, expected {(d, d)}")
        scale = max(float(np.max(np.abs(cov))), np.finfo(float).tiny)
        if np.max(np.abs(cov - cov.T)) > 1e-12 * scale:
            raise ValueError("covariance is not symmetric")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance is not positive definite") from exc
        inv_chol = np.linalg.inv(chol)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "diag", None)
        object.__setattr__(self, "chol", chol)
        object.__setattr__(self, "precision", inv_chol.T @ inv_chol)
        logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
        object.__setattr__(self, "log_norm", -0.5 * (d * LOG_2PI + logdet))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def logpdf(self, x) -> float:
        return log_gaussian_density(x, self)

    def draw(self, rng: RngStream) -> np.ndarray:
        return draw_gaussian(rng, self)


def log_gaussian_density(x, density: GaussianDensity) -> float:
    """Natural-log density of ``density`` at ``x``."""
    if type(x) is not np.ndarray:
        x = np.asarray(x, dtype=float)
    if x.shape != density.mean.shape:
        raise ValueError(f"point has shape {x.shape}, density has dimension {density.dim}")
    r = x - density.mean
    if density.diag is not None:
        quad = float(np.dot(r, r / density.diag))
    else:
        quad = float(r @ density.precision @ r)
    return density.log_norm - 0.5 * quad


def draw_gaussian(rng: RngStream, density: GaussianDensity) -> np.ndarray:
    z = rng.gen.standard_normal(density.mean.shape[0])
    if density.diag is not None:
        return density.mean + density.chol * z
    return density.mean + density.chol @ z


# --- proposals --------------------------------------------------------------


class GaussianRandomWalk:
    """Symmetric proposal theta' = theta + N(0, cov)."""

    symmetric = True

    def __init__(self, cov, dim: Optional[int] = None):
        cov = np.asarray(cov, dtype=float)
        if dim is None:
            dim = cov.shape[0] if cov.ndim else 1
        self.set_covariance(cov, dim)

    def set_covariance(self, cov, dim: Optional[int] = None):
        dim = self.dim if dim is None else dim
        self.step = GaussianDensity(np.zeros(dim), cov)
        self.dim = dim

    def draw(self, current: np.ndarray, rng: RngStream) -> np.ndarray:
        return current + draw_gaussian(rng, self.step)

    def logpdf(self, to: np.ndarray, given: np.ndarray) -> float:
        return log_gaussian_density(np.asarray(to) - given, self.step)

    def adapt(self, sample: np.ndarray) -> None:
        pass


@dataclass(frozen=True, eq=False)
class AdaptiveState:
    """One-pass covariance statistics for Adaptive Metropolis."""

    count: int
    mean: np.ndarray
    scatter: np.ndarray
    interval: int = 100
    eps: float = 1e-6
    scale: Optional[float] = None

    @classmethod
    def initial(cls, dim: int, interval: int = 100, eps: float = 1e-6, scale: Optional[float] = None):
        return cls(0, np.zeros(dim), np.zeros((dim, dim)), interval, eps, scale)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def covariance(self) -> np.ndarray:
        """Scaled, regularised sample covariance, s_d * Cov + eps * I."""
        d = self.dim
        s = 2.38**2 / d if self.scale is None else self.scale
        cov = self.scatter / (self.count - 1) if self.count > 1 else np.zeros((d, d))
        c = s * cov + self.eps * np.eye(d)
        return 0.5 * (c + c.T)


def am_update(state: AdaptiveState, new_sample) -> Tuple[AdaptiveState, Optional[np.ndarray]]:
    """Fold one sample into ``state``; every ``interval`` samples also
    return the new proposal covariance (otherwise ``None``)."""
    x = np.asarray(new_sample, dtype=float)
    if x.shape != state.mean.shape:
        raise ValueError(f"sample has shape {x.shape}, expected {state.mean.shape}")
    n = state.count + 1
    delta = x - state.mean
    mean = state.mean + delta / n
    scatter = state.scatter + np.outer(delta, x - mean)
    new = AdaptiveState(n, mean, scatter, state.interval, state.eps, state.scale)
    if n % state.interval == 0:
        return new, new.covariance()
    return new, None


class AdaptiveMetropolis(GaussianRandomWalk):
    """Random walk whose covariance is re-estimated from the chain history
    every ``interval`` samples.

    Statistics are updated in place with the same recurrence as
    :func:`am_update`; ``state`` returns an immutable snapshot.
    """

    def __init__(self, initial_cov, dim: int, interval: int = 100, eps: float = 1e-6,
                 scale: Optional[float] = None):
        super().__init__(initial_cov, dim)
        self.interval = interval
        self.eps = eps
        self.scale = scale
        self._n = 0
        self._mean = np.zeros(dim)
        self._scatter = np.zeros((dim, dim))

    @property
    def state(self) -> AdaptiveState:
        return AdaptiveState(self._n, self._mean.copy(), self._scatter.copy(),
                             self.interval, self.eps, self.scale)

    def adapt(self, sample: np.ndarray) -> None:
        self._n += 1
        delta = sample - self._mean
        self._mean += delta / self._n
        self._scatter += delta[:, None] * (sample - self._mean)
        if self._n % self.interval == 0:
            self.set_covariance(self.state.covariance())

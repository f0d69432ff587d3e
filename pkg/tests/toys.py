"""Small problems shared by several test modules."""

import math

import numpy as np

from mlmcmc.hierarchy import SamplingProblem


class DiscreteTarget(SamplingProblem):
    """Probability mass ``probs[k]`` at the point k of the real line."""

    def __init__(self, probs):
        self.probs = np.asarray(probs, dtype=float)
        self.dim = 1
        self.qoi_dim = 1
        self.calls = 0

    def log_density(self, theta):
        self.calls += 1
        k = float(theta[0])
        i = int(round(k))
        if abs(k - i) > 1e-12 or not 0 <= i < len(self.probs) or self.probs[i] == 0:
            return -math.inf
        return math.log(self.probs[i])

    def qoi(self, theta):
        return np.array([float(theta[0])])


class UnitStep:
    """Symmetric proposal: one unit left or right with equal probability."""

    symmetric = True

    def draw(self, current, rng):
        return current + (1.0 if rng.gen.random() < 0.5 else -1.0)

    def logpdf(self, to, given):
        return math.log(0.5) if abs(abs(float(to[0] - given[0])) - 1.0) < 1e-12 else -math.inf

    def adapt(self, sample):
        pass


class Fixed:
    """Proposal that always proposes ``point``."""

    symmetric = True

    def __init__(self, point):
        self.point = np.asarray(point, dtype=float)

    def draw(self, current, rng):
        rng.gen.random()
        return self.point.copy()

    def logpdf(self, to, given):
        return 0.0

    def adapt(self, sample):
        pass


class Scripted(SamplingProblem):
    """Log density from a dict of first-coordinate values (default 0)."""

    def __init__(self, table, default=0.0):
        self.table = table
        self.default = default
        self.dim = 1
        self.qoi_dim = 1

    def log_density(self, theta):
        return self.table.get(round(float(theta[0]), 9), self.default)

    def qoi(self, theta):
        return np.asarray(theta, dtype=float)


def ar1(rho, n, seed):
    rng = np.random.default_rng(seed)
    e = rng.standard_normal(n) * math.sqrt(1 - rho * rho)
    x = np.empty(n)
    x[0] = rng.standard_normal()
    for i in range(1, n):
        x[i] = rho * x[i - 1] + e[i]
    return x


def ar1_fast(rho, n, seed):
    """Same process via a linear filter (no Python loop)."""
    from scipy.signal import lfilter
    rng = np.random.default_rng(seed)
    e = rng.standard_normal(n) * math.sqrt(1 - rho * rho)
    e[0] = rng.standard_normal()
    return lfilter([1.0], [1.0, -rho], e)

"""Truncated Karhunen-Loeve type expansion of a log-diffusivity field on the
unit square, built from separable cosine modes."""

from __future__ import annotations

import math
from typing import List, Tuple

import numpy as np


def spectral_density(omega, corr_length: float = 0.15):
    """1-D spectral decay of an exponential covariance (unnormalised)."""
    omega = np.asarray(omega, dtype=float)
    return 1.0 / (1.0 + (corr_length * omega) ** 2)


def _cos_mode(i: int, x):
    x = np.asarray(x, dtype=float)
    if i == 0:
        return np.ones_like(x)
    return math.sqrt(2.0) * np.cos(math.pi * i * x)


class KLField:
    """log kappa(x, y) = sum_k a_k phi_k(x, y) theta_k.

    Mode k is the tensor product ``c_i(x) c_j(y)`` of L2-normalised cosines
    ``c_0 = 1``, ``c_i = sqrt(2) cos(pi i x)``. Amplitudes follow
    ``a_k ~ sqrt(S(pi i) S(pi j))`` for the exponential-covariance spectrum
    ``S`` and are scaled so that ``sum a_k^2 = variance``, i.e. the
    domain-averaged pointwise variance under theta ~ N(0, I) equals
    ``variance``. Modes are ordered by decreasing amplitude (longest
    wavelength first), ties broken by (i + j, i).

    The constant mode is left out: the forward problem is invariant under
    kappa -> c kappa, so its coefficient could not be inferred from data.
    """

    def __init__(self, num_modes: int = 8, corr_length: float = 0.15, variance: float = 1.0):
        if num_modes < 1:
            raise ValueError("need at least one mode")
        self.num_modes = int(num_modes)
        self.corr_length = float(corr_length)
        self.variance = float(variance)
        kmax = int(math.ceil(math.sqrt(num_modes))) + 2
        cands = []
        for i in range(kmax + 1):
            for j in range(kmax + 1):
                if i == 0 and j == 0:
                    continue
                amp2 = float(spectral_density(math.pi * i, corr_length) * spectral_density(math.pi * j, corr_length))
                cands.append((-amp2, i + j, i, j))
        cands.sort()
        chosen = cands[: self.num_modes]
        self.indices: List[Tuple[int, int]] = [(c[2], c[3]) for c in chosen]
        amp2 = np.array([-c[0] for c in chosen])
        self.amplitudes = np.sqrt(amp2 * self.variance / amp2.sum())

    @property
    def dim(self) -> int:
        return self.num_modes

    def basis(self, x, y) -> np.ndarray:
        """Scaled modes a_k phi_k at the points; shape (npoints, m)."""
        x = np.atleast_1d(np.asarray(x, dtype=float)).ravel()
        y = np.atleast_1d(np.asarray(y, dtype=float)).ravel()
        cols = [a * _cos_mode(i, x) * _cos_mode(j, y) for a, (i, j) in zip(self.amplitudes, self.indices)]
        return np.stack(cols, axis=1)

    def log_field(self, theta, x, y) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.num_modes,):
            raise ValueError(f"expected {self.num_modes} coefficients, got shape {theta.shape}")
        return self.basis(x, y) @ theta


def kl_log_field(theta, point, field: KLField) -> float:
    """log kappa at a single point ``(x, y)``."""
    return float(field.log_field(theta, point[0], point[1])[0])

"""Single-chain Metropolis-Hastings and chain diagnostics."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from .probability import RngStream

NEG_INF = -math.inf


@dataclass(slots=True)
class ChainState:
    position: np.ndarray
    log_density: float
    qoi: Optional[np.ndarray] = None
    step: int = 0
    accepted: bool = False


def _clean(logd: float) -> float:
    # NaN from a broken model evaluation counts as zero density
    return NEG_INF if logd != logd else float(logd)


def initial_state(problem, start) -> ChainState:
    start = np.asarray(start, dtype=float)
    logd = _clean(problem.log_density(start))
    if logd == NEG_INF:
        raise ValueError("invalid starting point")
    return ChainState(start, logd)


def ensure_qoi(state: ChainState, problem) -> ChainState:
    """Fill the QOI cache of ``state`` if empty (at most once per position)."""
    if state.qoi is None:
        state.qoi = np.atleast_1d(np.asarray(problem.qoi(state.position), dtype=float))
    return state


def mh_step(state: ChainState, problem, proposal, rng: RngStream) -> ChainState:
    """One Metropolis-Hastings transition.

    ``proposal`` provides ``draw(current, rng)``, ``logpdf(to, given)`` and a
    ``symmetric`` flag. On rejection the returned state reuses the cached
    log-density and QOI of ``state``.
    """
    prop = proposal.draw(state.position, rng)
    logd = _clean(problem.log_density(prop))
    log_alpha = logd - state.log_density
    if not proposal.symmetric:
        log_alpha += proposal.logpdf(state.position, prop) - proposal.logpdf(prop, state.position)
    r = rng.gen.random()
    if logd != NEG_INF and (log_alpha >= 0.0 or r < math.exp(log_alpha)):
        return ChainState(prop, logd, None, state.step + 1, True)
    return ChainState(state.position, state.log_density, state.qoi, state.step + 1, False)


def metropolis_kernel(problem, proposal) -> Callable[[ChainState, RngStream], ChainState]:
    """MH transition followed by proposal adaptation (a no-op for fixed proposals)."""

    def kernel(state: ChainState, rng: RngStream) -> ChainState:
        new = mh_step(state, problem, proposal, rng)
        proposal.adapt(new.position)
        return new

    return kernel


@dataclass
class SampleSet:
    positions: np.ndarray
    log_densities: np.ndarray
    accepted: np.ndarray
    qois: List[Optional[np.ndarray]]
    burn_in: int

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def post_positions(self) -> np.ndarray:
        return self.positions[self.burn_in:]

    @property
    def post_qoi(self) -> np.ndarray:
        return np.array(self.qois[self.burn_in:])

    @property
    def acceptance_rate(self) -> float:
        if len(self) < 2:
            return 0.0
        return float(np.mean(self.accepted[1:]))


def run_chain(problem, kernel, start, n: int, burn_in: int, rng: RngStream) -> SampleSet:
    """Run ``n - 1`` kernel applications from ``start``.

    QOIs are only evaluated for states at index ``>= burn_in``.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    if not 0 <= burn_in < n:
        raise ValueError("burn-in must satisfy 0 <= burn_in < n")
    state = initial_state(problem, start)
    positions = np.empty((n, state.position.shape[0]))
    logds = np.empty(n)
    accepted = np.zeros(n, dtype=bool)
    qois: List[Optional[np.ndarray]] = [None] * n
    for i in range(n):
        if i > 0:
            state = kernel(state, rng)
        positions[i] = state.position
        logds[i] = state.log_density
        accepted[i] = state.accepted
        if i >= burn_in:
            qois[i] = ensure_qoi(state, problem).qoi
    return SampleSet(positions, logds, accepted, qois, burn_in)


# --- diagnostics -------------------------------------------------------------


class IACTWarning(UserWarning):
    pass


def autocovariance(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance of each row of ``x`` (shape (chains, n))."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = x.shape[1]
    xc = x - x.mean(axis=1, keepdims=True)
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, nfft, axis=1)
    return np.fft.irfft(f * np.conj(f), nfft, axis=1)[:, :n] / n


def iact(samples) -> float:
    """Integrated autocorrelation time by Geyer's initial monotone sequence.

    ``samples`` is a 1-D chain or a 2-D array of equally long chains (rows);
    for several chains the autocovariances are averaged. Returns at least 1.
    A constant input gives ``N`` and an :class:`IACTWarning`.
    """
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    n = x.shape[1]
    if n < 10:
        raise ValueError("iact needs at least 10 samples")
    acov = autocovariance(x).mean(axis=0)
    if not acov[0] > 0:
        warnings.warn("constant sequence; IACT set to the sample count", IACTWarning)
        return float(n)
    npairs = n // 2
    pairs = acov[: 2 * npairs].reshape(npairs, 2).sum(axis=1)
    total = 0.0
    prev = math.inf
    for g in pairs:
        if g <= 0:
            break
        prev = min(prev, g)
        total += prev
    tau = (-acov[0] + 2.0 * total) / acov[0]
    return max(tau, 1.0)


def effective_sample_size(samples) -> float:
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    return x.size / iact(x)

"""Multilevel MCMC: two-level kernel, subsampled coarse proposals, the
telescoping estimator and mergeable per-level statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np

from .chain import ChainState, NEG_INF, _clean, ensure_qoi, iact, initial_state, mh_step
from .hierarchy import HierarchyFactory, Interpolation
from .probability import RngStream

BASE = "base"
CORRECTION = "correction"


# --- statistics --------------------------------------------------------------


@dataclass
class LevelEstimate:
    """Running mean / M2 of Q_0 (``kind="base"``) or of Q_l - Q_{l-1}."""

    level: int
    kind: str
    count: int
    mean: np.ndarray
    m2: np.ndarray

    @classmethod
    def empty(cls, level: int, kind: str, dim: int) -> "LevelEstimate":
        return cls(level, kind, 0, np.zeros(dim), np.zeros(dim))

    @classmethod
    def from_samples(cls, level: int, kind: str, samples) -> "LevelEstimate":
        x = np.asarray(samples, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[0] == 0:
            return cls.empty(level, kind, x.shape[1])
        mean = x.mean(axis=0)
        return cls(level, kind, x.shape[0], mean, ((x - mean) ** 2).sum(axis=0))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def push(self, x) -> None:
        x = np.asarray(x, dtype=float)
        self.count += 1
        delta = x - self.mean
        self.mean = self.mean + delta / self.count
        self.m2 = self.m2 + delta * (x - self.mean)

    @property
    def variance(self) -> np.ndarray:
        if self.count < 2:
            return np.full(self.dim, np.nan)
        return self.m2 / (self.count - 1)


def merge_statistics(a: LevelEstimate, b: LevelEstimate) -> LevelEstimate:
    """Combine two estimates as if computed from the concatenated streams."""
    if a.level != b.level or a.kind != b.kind or a.dim != b.dim:
        raise ValueError(
            f"cannot merge {a.kind} estimate of level {a.level} (dim {a.dim}) "
            f"with {b.kind} estimate of level {b.level} (dim {b.dim})"
        )
    if a.count == 0:
        return LevelEstimate(b.level, b.kind, b.count, b.mean.copy(), b.m2.copy())
    if b.count == 0:
        return LevelEstimate(a.level, a.kind, a.count, a.mean.copy(), a.m2.copy())
    n = a.count + b.count
    delta = b.mean - a.mean
    mean = (a.count * a.mean + b.count * b.mean) / n
    m2 = a.m2 + b.m2 + delta * delta * (a.count * b.count / n)
    return LevelEstimate(a.level, a.kind, n, mean, m2)


def _ordered_levels(estimates: Sequence[LevelEstimate]) -> List[LevelEstimate]:
    by_level = {}
    for est in estimates:
        if est.level in by_level:
            raise ValueError(f"duplicate estimate for level {est.level}")
        by_level[est.level] = est
    n = len(by_level)
    if n == 0 or sorted(by_level) != list(range(n)):
        raise ValueError("incomplete telescoping sum")
    ordered = [by_level[l] for l in range(n)]
    if ordered[0].kind != BASE or any(e.kind != CORRECTION for e in ordered[1:]):
        raise ValueError("incomplete telescoping sum")
    return ordered


def telescoping_estimate(estimates: Sequence[LevelEstimate], iacts=None):
    """E[Q_L] = E[Q_0] + sum_l E[Q_l - Q_{l-1}] and its standard error.

    The standard error treats levels as independent,
    ``sqrt(sum_l tau_l * V_l / N_l)``; ``iacts`` (one scalar or vector per
    level) defaults to 1, i.e. uncorrelated samples.
    """
    ordered = _ordered_levels(estimates)
    if any(e.count < 2 for e in ordered):
        raise ValueError("every level needs more than one sample")
    if iacts is None:
        iacts = [1.0] * len(ordered)
    mean = np.zeros(ordered[0].dim)
    var = np.zeros(ordered[0].dim)
    for est, tau in zip(ordered, iacts):
        mean = mean + est.mean
        var = var + np.asarray(tau, dtype=float) * est.variance / est.count
    return mean, np.sqrt(var)


def telescoping_partial_sums(estimates: Sequence[LevelEstimate]) -> List[np.ndarray]:
    """Running sums E[Q_0] + sum_{k<=l} E[Q_k - Q_{k-1}] for l = 0..L."""
    out, acc = [], None
    for est in _ordered_levels(estimates):
        acc = est.mean.copy() if acc is None else acc + est.mean
        out.append(acc)
    return out


# --- acceptance ----------------------------------------------------------------


def ml_log_acceptance(fine_current: float, fine_proposed: float,
                      coarse_current: float, coarse_proposed: float,
                      log_q_reverse: float = 0.0, log_q_forward: float = 0.0) -> float:
    """log of the two-level acceptance ratio (before taking min with 0).

    The fine and coarse ratios are formed separately so that identical
    levels cancel exactly.
    """
    if fine_proposed == NEG_INF:
        return NEG_INF
    fine = fine_proposed - fine_current
    coarse = coarse_current - coarse_proposed
    return (fine + coarse) + (log_q_reverse - log_q_forward)


def ml_acceptance(fine_current: float, fine_proposed: float,
                  coarse_current: float, coarse_proposed: float,
                  log_q_reverse: float = 0.0, log_q_forward: float = 0.0) -> float:
    """Acceptance probability of a fine proposal built from a coarse sample.

    Arguments are log-densities: ``fine_*`` of the level-l posterior at the
    current/proposed fine state, ``coarse_*`` of the level-(l-1) posterior
    at their coarse components. ``log_q_*`` are the fine-component proposal
    terms q(current|proposed) and q(proposed|current); leave them at 0 when
    there are no extra fine components.
    """
    la = ml_log_acceptance(fine_current, fine_proposed, coarse_current, coarse_proposed,
                           log_q_reverse, log_q_forward)
    return 1.0 if la >= 0 else math.exp(la)


# --- chains --------------------------------------------------------------------


@dataclass(slots=True)
class CoarseSample:
    """A coarse-chain state delivered as proposal; its QOI is filled lazily."""

    position: np.ndarray
    log_density: float
    qoi: Optional[np.ndarray] = None
    state: Optional[ChainState] = None
    problem: object = None

    def get_qoi(self) -> np.ndarray:
        if self.qoi is None:
            self.qoi = ensure_qoi(self.state, self.problem).qoi
        return self.qoi


class SingleLevelChain:
    """Plain MH chain (the coarsest level)."""

    level_offset = 0

    def __init__(self, problem, proposal, start, rng: RngStream):
        self.problem = problem
        self.proposal = proposal
        self.rng = rng
        self.state = initial_state(problem, start)
        self.steps = 0
        self.accepts = 0

    def advance(self) -> ChainState:
        self.state = mh_step(self.state, self.problem, self.proposal, self.rng)
        self.proposal.adapt(self.state.position)
        self.steps += 1
        self.accepts += self.state.accepted
        return self.state

    def burn(self, n: int) -> None:
        for _ in range(n):
            self.advance()


class SubsampledSource:
    """Local proposal source: advances an embedded chain ``rate + 1`` steps
    per delivered proposal; intermediate states are discarded."""

    def __init__(self, chain, rate: int):
        if rate < 0:
            raise ValueError("subsampling rate must be non-negative")
        self.chain = chain
        self.rate = int(rate)
        self.coarse_steps = 0

    @property
    def problem(self):
        return self.chain.problem

    def next_proposal(self) -> CoarseSample:
        for _ in range(self.rate + 1):
            self.chain.advance()
        self.coarse_steps += self.rate + 1
        st = self.chain.state
        return CoarseSample(st.position, st.log_density, st.qoi, st, self.chain.problem)


class TwoLevelKernel:
    """Fine chain on level l driven by proposals from a level l-1 source.

    ``source`` has ``next_proposal() -> CoarseSample``; it may be a local
    :class:`SubsampledSource` or a remote one served by other processes.
    ``coarse_problem`` is only used once, to evaluate the coarse density at
    the coarse component of the starting point.
    """

    def __init__(self, problem, source, coarse_problem, start, rng: RngStream,
                 interpolation: Optional[Interpolation] = None, fine_proposal=None,
                 coarse_start_log_density: Optional[float] = None):
        self.problem = problem
        self.source = source
        self.rng = rng
        start = np.asarray(start, dtype=float)
        self.interpolation = interpolation or Interpolation(start.shape[0], start.shape[0])
        if self.interpolation.extra_dim and fine_proposal is None:
            raise ValueError("a fine proposal is required when the fine level adds parameters")
        self.fine_proposal = fine_proposal
        self.state = initial_state(problem, start)
        coarse_start = self.interpolation.split(start)[0]
        if coarse_start_log_density is None:
            coarse_start_log_density = _clean(coarse_problem.log_density(coarse_start))
        self.coarse_log_density = coarse_start_log_density
        self.last_coarse: Optional[CoarseSample] = None
        self.steps = 0
        self.accepts = 0

    @property
    def coarse_steps(self) -> int:
        return getattr(self.source, "coarse_steps", 0)

    def advance(self) -> ChainState:
        return two_level_step(self)

    def burn(self, n: int) -> None:
        for _ in range(n):
            self.advance()

    def correction(self) -> np.ndarray:
        """Q_l(current fine state) - Q_{l-1}(coarse proposal of the last step)."""
        q = ensure_qoi(self.state, self.problem).qoi
        return q - self.last_coarse.get_qoi()


def subsample_coarse(kernel: TwoLevelKernel) -> np.ndarray:
    """Next coarse proposal position (advances the embedded chain rate+1 steps)."""
    sample = kernel.source.next_proposal()
    kernel.last_coarse = sample
    return sample.position


def two_level_step(kernel: TwoLevelKernel) -> ChainState:
    """One step of the multilevel kernel; mutates and returns the fine state."""
    rng = kernel.rng
    state = kernel.state
    cs = kernel.source.next_proposal()
    interp = kernel.interpolation
    log_q_rev = log_q_fwd = 0.0
    if interp.extra_dim:
        _, cur_extra = interp.split(state.position)
        new_extra = kernel.fine_proposal.draw(cur_extra, rng)
        if not kernel.fine_proposal.symmetric:
            log_q_rev = kernel.fine_proposal.logpdf(cur_extra, new_extra)
            log_q_fwd = kernel.fine_proposal.logpdf(new_extra, cur_extra)
        prop = interp.combine(cs.position, new_extra)
    else:
        prop = cs.position
    logd = _clean(kernel.problem.log_density(prop))
    la = ml_log_acceptance(state.log_density, logd, kernel.coarse_log_density, cs.log_density,
                           log_q_rev, log_q_fwd)
    r = rng.gen.random()
    if la != NEG_INF and (la >= 0.0 or r < math.exp(la)):
        new = ChainState(prop, logd, None, state.step + 1, True)
        kernel.coarse_log_density = cs.log_density
        kernel.accepts += 1
    else:
        new = ChainState(state.position, state.log_density, state.qoi, state.step + 1, False)
    if interp.extra_dim:
        kernel.fine_proposal.adapt(interp.split(new.position)[1])
    kernel.last_coarse = cs
    kernel.state = new
    kernel.steps += 1
    return new


def build_chain(factory: HierarchyFactory, level: int, rng: RngStream, coarse_burn_in: int = 0,
                comm=None):
    """Chain on ``level`` with the full stack of coarser chains embedded.

    Each embedded coarse chain is burned in for ``coarse_burn_in`` steps
    before the finer chain starts; the finer chain starts from the coarse
    chain's current position (plus the factory's extra fine components).
    """
    problem = factory.sampling_problem(level, comm)
    if level == 0:
        return SingleLevelChain(problem, factory.proposal(0, problem), factory.starting_point(0), rng)
    coarse = build_chain(factory, level - 1, rng.spawn(level - 1), coarse_burn_in, comm)
    coarse.burn(coarse_burn_in)
    interp = factory.interpolation(level)
    start = interp.combine(coarse.state.position,
                           np.asarray(factory.starting_point(level), dtype=float)[interp.coarse_dim:])
    source = SubsampledSource(coarse, factory.subsampling_rate(level - 1))
    fine_prop = factory.proposal(level, problem) if interp.extra_dim else None
    return TwoLevelKernel(problem, source, coarse.problem, start, rng, interp, fine_prop,
                          coarse_start_log_density=coarse.state.log_density if not interp.extra_dim else None)


# --- sequential driver -----------------------------------------------------------


@dataclass
class LevelRecord:
    level: int
    positions: np.ndarray
    qoi: np.ndarray
    coarse_qoi: Optional[np.ndarray]
    accepted: np.ndarray
    estimate: LevelEstimate
    iact: np.ndarray
    model_evaluations: int = 0

    @property
    def values(self) -> np.ndarray:
        """Q_0 on level 0, Q_l - Q_{l-1} above."""
        return self.qoi if self.coarse_qoi is None else self.qoi - self.coarse_qoi

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.accepted)) if self.accepted.size else 0.0


@dataclass
class MultilevelResult:
    levels: List[LevelRecord]
    estimate: np.ndarray
    standard_error: np.ndarray
    naive_standard_error: np.ndarray = field(default=None)


class _CountingProblem:
    """Wraps a problem and counts log-density evaluations."""

    def __init__(self, problem):
        self._p = problem
        self.dim = problem.dim
        self.qoi_dim = problem.qoi_dim
        self.evaluations = 0

    def log_density(self, theta):
        self.evaluations += 1
        return self._p.log_density(theta)

    def qoi(self, theta):
        return self._p.qoi(theta)


class _CountingFactory:
    def __init__(self, factory):
        self._f = factory
        self.problems = []

    def sampling_problem(self, level, comm=None):
        p = _CountingProblem(self._f.sampling_problem(level, comm))
        self.problems.append(p)
        return p

    def __getattr__(self, name):
        return getattr(self._f, name)


def componentwise_iact(values: np.ndarray) -> np.ndarray:
    """IACT of every column of ``values`` (rows are consecutive states);
    constant columns get 1."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    out = np.ones(values.shape[1])
    if values.shape[0] < 10:
        return out
    for j in range(values.shape[1]):
        col = values[:, j]
        if np.ptp(col) > 0:
            out[j] = iact(col)
    return out


def pooled_iact(values: np.ndarray, chains: np.ndarray) -> np.ndarray:
    """Componentwise IACT over several chains: each chain's estimate
    weighted by its length (rows of one chain must be consecutive states)."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    chains = np.asarray(chains)
    total = np.zeros(values.shape[1])
    n = 0
    for c in np.unique(chains):
        sel = values[chains == c]
        total += sel.shape[0] * componentwise_iact(sel)
        n += sel.shape[0]
    return total / n if n else np.ones(values.shape[1])


def run_multilevel(factory: HierarchyFactory, samples: Sequence[int],
                   burn_in: Union[int, Sequence[int]] = 0, coarse_burn_in: int = 0,
                   seed: int = 0) -> MultilevelResult:
    """Sequential MLMCMC: one independent multilevel chain per level.

    Level l runs the two-level kernel with the full coarser stack embedded,
    discards ``burn_in[l]`` steps and records ``samples[l]`` states.
    """
    nlev = factory.num_levels
    if len(samples) != nlev:
        raise ValueError(f"need {nlev} sample counts, got {len(samples)}")
    if isinstance(burn_in, int):
        burn_in = [burn_in] * nlev
    records = []
    for level in range(nlev):
        counting = _CountingFactory(factory)
        chain = build_chain(counting, level, RngStream(seed, (level, 0)), coarse_burn_in)
        chain.burn(burn_in[level])
        n = int(samples[level])
        qdim = chain.problem.qoi_dim
        pos = np.empty((n, chain.problem.dim))
        qoi = np.empty((n, qdim))
        cqoi = np.empty((n, qdim)) if level > 0 else None
        acc = np.zeros(n, dtype=bool)
        for j in range(n):
            st = chain.advance()
            pos[j] = st.position
            qoi[j] = ensure_qoi(st, chain.problem).qoi
            acc[j] = st.accepted
            if level > 0:
                cqoi[j] = chain.last_coarse.get_qoi()
        vals = qoi if cqoi is None else qoi - cqoi
        est = LevelEstimate.from_samples(level, BASE if level == 0 else CORRECTION, vals)
        evals = sum(p.evaluations for p in counting.problems)
        records.append(LevelRecord(level, pos, qoi, cqoi, acc, est, componentwise_iact(vals), evals))
    estimates = [r.estimate for r in records]
    mean, se = telescoping_estimate(estimates, [r.iact for r in records])
    _, naive = telescoping_estimate(estimates)
    return MultilevelResult(records, mean, se, naive)

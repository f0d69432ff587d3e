"""Steady Darcy-type flow on the unit square with a log-normal diffusivity:

    -div(kappa grad u) = f,  u = 0 at x = 0,  u = 1 at x = 1,
    zero flux at y = 0 and y = 1,

discretised by a node-centred five-point finite-volume scheme with
harmonic-mean face diffusivities, and the Bayesian inverse problem of
recovering the KL coefficients of log(kappa) from point values of u.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import least_squares
from scipy.sparse.linalg import cg

from ..hierarchy import BayesianProblem, GroupComm, HierarchyFactory
from ..probability import AdaptiveMetropolis, GaussianDensity, GaussianRandomWalk, log_gaussian_density
from .kl import KLField

# the (likely mistyped) sixth coordinate is replaced by its mirror image 30/32
DEFAULT_OBS_COORDS = tuple(k / 32 for k in (2, 7, 13, 19, 25, 30))


class SolverError(RuntimeError):
    """Raised when the linear solver fails to converge."""


def _harmonic(a, b):
    return 2.0 * a * b / (a + b)


class PoissonMesh:
    """Node grid of (n+1)^2 points with width h = 1/n; node (i, j) sits at
    (i h, j h) and is stored at flat index i (n+1) + j."""

    def __init__(self, n: int):
        n = int(n)
        if n < 4 or n & (n - 1):
            raise ValueError(f"mesh size must be a power of two >= 4, got {n}")
        self.n = n
        self.h = 1.0 / n
        c = np.linspace(0.0, 1.0, n + 1)
        self.coords = c
        X, Y = np.meshgrid(c, c, indexing="ij")
        self.x = X.ravel()
        self.y = Y.ravel()
        N = n + 1
        idx = np.arange(N * N).reshape(N, N)
        # faces normal to x: between (i, j) and (i+1, j); half length on y = 0, 1
        wy = np.ones(N)
        wy[[0, -1]] = 0.5
        wx = np.ones(N)
        wx[[0, -1]] = 0.5
        self.edge_a = np.concatenate([idx[:-1, :].ravel(), idx[:, :-1].ravel()])
        self.edge_b = np.concatenate([idx[1:, :].ravel(), idx[:, 1:].ravel()])
        self.edge_w = np.concatenate([np.broadcast_to(wy, (n, N)).ravel(),
                                      np.broadcast_to(wx[:, None], (N, n)).ravel()])
        # control-volume areas (in units of h^2)
        self.volume = np.outer(wx, wy).ravel()
        dirichlet = np.zeros(N * N, dtype=bool)
        dirichlet[idx[0, :]] = True
        dirichlet[idx[-1, :]] = True
        self.dirichlet_values = np.where(self.x > 0.5, 1.0, 0.0)
        self.free = np.flatnonzero(~dirichlet)
        self.free_index = np.full(N * N, -1)
        self.free_index[self.free] = np.arange(self.free.size)
        fa, fb = self.free_index[self.edge_a], self.free_index[self.edge_b]
        both = (fa >= 0) & (fb >= 0)
        self._both = both
        self._fa, self._fb = fa, fb
        nf = self.free.size
        self._rows = np.concatenate([fa[both], fb[both], np.arange(nf)])
        self._cols = np.concatenate([fb[both], fa[both], np.arange(nf)])

    @property
    def num_nodes(self) -> int:
        return (self.n + 1) ** 2

    def reshape(self, values) -> np.ndarray:
        return np.asarray(values).reshape(self.n + 1, self.n + 1)


def solve_poisson_kappa(kappa, mesh: PoissonMesh, source: Optional[Callable] = None,
                        rtol: float = 1e-10, maxiter: Optional[int] = None) -> np.ndarray:
    """Solve for nodal diffusivities ``kappa`` (flat or (n+1, n+1)); returns
    the nodal solution as an (n+1, n+1) array indexed [i_x, i_y]."""
    kappa = np.asarray(kappa, dtype=float).ravel()
    if kappa.shape[0] != mesh.num_nodes:
        raise ValueError(f"expected {mesh.num_nodes} nodal values, got {kappa.shape[0]}")
    c = mesh.edge_w * _harmonic(kappa[mesh.edge_a], kappa[mesh.edge_b])
    fa, fb, both = mesh._fa, mesh._fb, mesh._both
    nf = mesh.free.size
    diag = np.bincount(fa[fa >= 0], weights=c[fa >= 0], minlength=nf)
    diag += np.bincount(fb[fb >= 0], weights=c[fb >= 0], minlength=nf)
    rhs = np.zeros(nf)
    # edges with one Dirichlet end move the known value to the right-hand side
    a_only = (fa >= 0) & (fb < 0)
    b_only = (fb >= 0) & (fa < 0)
    rhs += np.bincount(fa[a_only], weights=c[a_only] * mesh.dirichlet_values[mesh.edge_b[a_only]], minlength=nf)
    rhs += np.bincount(fb[b_only], weights=c[b_only] * mesh.dirichlet_values[mesh.edge_a[b_only]], minlength=nf)
    if source is not None:
        f = np.asarray(source(mesh.x[mesh.free], mesh.y[mesh.free]), dtype=float)
        rhs += f * mesh.volume[mesh.free] * mesh.h**2
    off = -c[both]
    data = np.concatenate([off, off, diag])
    A = sp.csr_matrix((data, (mesh._rows, mesh._cols)), shape=(nf, nf))
    x0 = mesh.x[mesh.free]
    inv_diag = 1.0 / diag
    M = sp.diags(inv_diag)
    sol, info = cg(A, rhs, x0=x0, rtol=rtol, atol=0.0, M=M,
                   maxiter=maxiter if maxiter is not None else 10 * nf)
    if info != 0:
        raise SolverError(f"conjugate gradients did not converge (info={info})")
    u = mesh.dirichlet_values.copy()
    u[mesh.free] = sol
    return mesh.reshape(u)


def solve_poisson(theta, mesh: PoissonMesh, field: KLField, **kw) -> np.ndarray:
    kappa = np.exp(field.log_field(theta, mesh.x, mesh.y))
    return solve_poisson_kappa(kappa, mesh, **kw)


def observation_points(coords: Sequence[float] = DEFAULT_OBS_COORDS) -> np.ndarray:
    """Tensor grid of points, row-major (y outer, x inner); shape (k^2, 2)."""
    c = np.asarray(coords, dtype=float)
    X, Y = np.meshgrid(c, c, indexing="xy")
    return np.column_stack([X.ravel(), Y.ravel()])


def observation_matrix(points, mesh: PoissonMesh) -> sp.csr_matrix:
    """Sparse bilinear-interpolation operator from nodal values to points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if np.any(pts < 0.0) or np.any(pts > 1.0):
        raise ValueError("observation point outside the unit square")
    n = mesh.n
    s = pts / mesh.h
    i0 = np.minimum(np.floor(s[:, 0]).astype(int), n - 1)
    j0 = np.minimum(np.floor(s[:, 1]).astype(int), n - 1)
    tx = s[:, 0] - i0
    ty = s[:, 1] - j0
    N = n + 1
    rows, cols, vals = [], [], []
    for di, dj, w in ((0, 0, (1 - tx) * (1 - ty)), (1, 0, tx * (1 - ty)),
                      (0, 1, (1 - tx) * ty), (1, 1, tx * ty)):
        rows.append(np.arange(len(pts)))
        cols.append((i0 + di) * N + (j0 + dj))
        vals.append(w)
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(len(pts), mesh.num_nodes))


def forward_observe(u, points, mesh: PoissonMesh) -> np.ndarray:
    """Bilinear interpolation of the nodal solution ``u`` at ``points``."""
    return observation_matrix(points, mesh) @ np.asarray(u, dtype=float).ravel()


def qoi_points(width: float) -> np.ndarray:
    """Nodes of the QOI grid with spacing ``width`` (row-major)."""
    k = int(round(1.0 / width))
    return observation_points(np.linspace(0.0, 1.0, k + 1))


# --- synthetic data ------------------------------------------------------------


@dataclass
class SyntheticData:
    theta: np.ndarray
    points: np.ndarray
    values: np.ndarray
    sigma: float
    seed: int
    mesh_size: int
    num_modes: int
    noisy: bool = False

    def to_json(self) -> str:
        return json.dumps({
            "schema": "mlmcmc-synthetic-data/1",
            "theta": self.theta.tolist(), "points": self.points.tolist(),
            "values": self.values.tolist(), "sigma": self.sigma, "seed": self.seed,
            "mesh_size": self.mesh_size, "num_modes": self.num_modes, "noisy": self.noisy,
        }, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "SyntheticData":
        d = json.loads(text)
        return cls(np.asarray(d["theta"], dtype=float), np.asarray(d["points"], dtype=float),
                   np.asarray(d["values"], dtype=float), float(d["sigma"]), int(d["seed"]),
                   int(d["mesh_size"]), int(d["num_modes"]), bool(d.get("noisy", False)))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "SyntheticData":
        with open(path) as fh:
            return cls.from_json(fh.read())


def generate_synthetic_data(seed: int, mesh_size: int = 32, sigma: float = 0.01, num_modes: int = 8,
                            coords: Sequence[float] = DEFAULT_OBS_COORDS, noisy: bool = False,
                            corr_length: float = 0.15) -> SyntheticData:
    """Draw theta ~ N(0, I), solve on the given mesh and observe.

    The data come from the same discretisation used for inversion
    (inverse crime); ``noisy`` adds N(0, sigma^2 I).
    """
    rng = np.random.default_rng(seed)
    field = KLField(num_modes, corr_length)
    theta = rng.standard_normal(num_modes)
    mesh = PoissonMesh(mesh_size)
    pts = observation_points(coords)
    y = forward_observe(solve_poisson(theta, mesh, field), pts, mesh)
    if noisy:
        y = y + sigma * rng.standard_normal(y.shape[0])
    return SyntheticData(theta, pts, y, float(sigma), int(seed), int(mesh_size), int(num_modes), noisy)


# --- sampling problem ------------------------------------------------------------


class PoissonProblem(BayesianProblem):
    """Posterior of the KL coefficients on one mesh.

    log density = log N(y; F_h(theta), sigma^2 I) + log N(theta; 0, prior_var I);
    the QOI is kappa(., theta) on a fixed grid, independent of the mesh.
    """

    def __init__(self, mesh: PoissonMesh, field: KLField, data: SyntheticData,
                 prior_var: float = 4.0, qoi_width: float = 0.125, sigma: Optional[float] = None,
                 comm: Optional[GroupComm] = None):
        self.mesh = mesh
        self.field = field
        self.data = data
        self.sigma = data.sigma if sigma is None else float(sigma)
        self.dim = field.dim
        self.prior = GaussianDensity(np.zeros(field.dim), float(prior_var))
        self.noise = GaussianDensity(np.zeros(len(data.values)), self.sigma**2)
        self._obs = observation_matrix(data.points, mesh)
        self._basis = field.basis(mesh.x, mesh.y)
        qp = qoi_points(qoi_width)
        self._qoi_basis = field.basis(qp[:, 0], qp[:, 1])
        self.qoi_dim = qp.shape[0]
        self.comm = comm

    def forward(self, theta) -> np.ndarray:
        kappa = np.exp(self._basis @ np.asarray(theta, dtype=float))
        return self._obs @ solve_poisson_kappa(kappa, self.mesh).ravel()

    def log_prior(self, theta) -> float:
        return log_gaussian_density(theta, self.prior)

    def log_likelihood(self, theta) -> float:
        try:
            pred = self.forward(theta)
        except SolverError:
            return math.nan
        return log_gaussian_density(self.data.values - pred, self.noise)

    def qoi(self, theta) -> np.ndarray:
        return np.exp(self._qoi_basis @ np.asarray(theta, dtype=float))


def poisson_problem(level: int, hierarchy: "PoissonHierarchy") -> PoissonProblem:
    return hierarchy.sampling_problem(level)


class PoissonHierarchy(HierarchyFactory):
    """Level l solves on a mesh with ``mesh_sizes[l]`` cells per side.

    All levels share the parameter dimension. Chains start at the level-0
    MAP point and the level-0 proposal is Adaptive Metropolis initialised
    with the scaled Laplace covariance there (``proposal_cov`` overrides it).
    """

    def __init__(self, data: SyntheticData, mesh_sizes: Sequence[int] = (8, 16, 32),
                 subsampling: Sequence[int] = (), prior_var: float = 4.0, qoi_width: float = 0.125,
                 corr_length: float = 0.15, proposal_cov=None, am_interval: int = 100,
                 am_eps: float = 1e-6, adaptive: bool = True, start=None):
        self.data = data
        self.mesh_sizes = [int(n) for n in mesh_sizes]
        self.field = KLField(data.num_modes, corr_length)
        self.subsampling = list(subsampling) + [0] * (len(self.mesh_sizes) - len(subsampling))
        self.prior_var = prior_var
        self.qoi_width = qoi_width
        self.am_interval = am_interval
        self.am_eps = am_eps
        self.adaptive = adaptive
        self._proposal_cov = proposal_cov
        self._start = None if start is None else np.asarray(start, dtype=float)
        self._meshes = {}
        self._problems = {}

    @property
    def dim(self) -> int:
        return self.field.dim

    def mesh(self, level: int) -> PoissonMesh:
        if level not in self._meshes:
            self._meshes[level] = PoissonMesh(self.mesh_sizes[level])
        return self._meshes[level]

    def finest_index(self) -> int:
        return len(self.mesh_sizes) - 1

    def sampling_problem(self, level: int, comm: Optional[GroupComm] = None) -> PoissonProblem:
        if not 0 <= level <= self.finest_index():
            raise ValueError(f"no level {level}")
        # problems are stateless, so one instance per level can be shared
        if level not in self._problems:
            self._problems[level] = PoissonProblem(self.mesh(level), self.field, self.data,
                                                   self.prior_var, self.qoi_width)
        return self._problems[level]

    def _laplace(self):
        if self._start is not None and self._proposal_cov is not None:
            return
        prob = self.sampling_problem(0)
        sd = math.sqrt(self.prior_var)

        def resid(t):
            return np.concatenate([(prob.forward(t) - self.data.values) / prob.sigma, t / sd])

        fit = least_squares(resid, np.zeros(self.dim), method="lm", xtol=1e-10, ftol=1e-10)
        if self._start is None:
            self._start = fit.x
        if self._proposal_cov is None:
            J = fit.jac
            cov = np.linalg.inv(J.T @ J)
            self._proposal_cov = (2.38**2 / self.dim) * 0.5 * (cov + cov.T)

    def proposal(self, level: int, problem):
        self._laplace()
        if self.adaptive:
            return AdaptiveMetropolis(self._proposal_cov, self.dim, self.am_interval, self.am_eps)
        return GaussianRandomWalk(self._proposal_cov, self.dim)

    def starting_point(self, level: int) -> np.ndarray:
        self._laplace()
        return self._start.copy()

    def subsampling_rate(self, level: int) -> int:
        return int(self.subsampling[level])

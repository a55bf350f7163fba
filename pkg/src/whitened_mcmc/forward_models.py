"""Likelihood potentials Phi(u; y) and the forward maps behind them."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse, special
from scipy.sparse import linalg as splinalg

from .errors import DomainError, NumericError
from .transforms import vector_levelset_map

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass
class ObservationSet:
    """Observation locations (points or node indices), values and noise level.

    ``values`` is 1-D for scalar data or (J, k) one-hot rows for class labels.
    """

    locations: np.ndarray
    values: np.ndarray
    noise_std: float

    def __post_init__(self):
        self.locations = np.asarray(self.locations)
        self.values = np.asarray(self.values, dtype=float)
        if not self.noise_std > 0:
            raise DomainError("noise standard deviation must be positive")
        if self.values.shape[0] != self.locations.shape[0]:
            raise DomainError("need one value per observation location")
        if self.values.ndim == 2 and not np.allclose(self.values.sum(axis=1), 1.0):
            raise DomainError("one-hot label rows must sum to one")

    def __len__(self):
        return self.locations.shape[0]


def write_observations_csv(path, obs: ObservationSet):
    """Columns: x0..x{d-1}, y or y0..y{k-1}, noise_std."""
    loc = obs.locations.reshape(len(obs), -1)
    val = obs.values.reshape(len(obs), -1)
    loc_cols = [f"x{i}" for i in range(loc.shape[1])]
    val_cols = ["y"] if val.shape[1] == 1 else [f"y{i}" for i in range(val.shape[1])]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(loc_cols + val_cols + ["noise_std"])
        for a, b in zip(loc, val):
            w.writerow([repr(float(t)) for t in a] + [repr(float(t)) for t in b] + [repr(float(obs.noise_std))])


def read_observations_csv(path) -> ObservationSet:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    header, body = rows[0], np.array(rows[1:], dtype=float)
    xi = [i for i, h in enumerate(header) if h.startswith("x")]
    yi = [i for i, h in enumerate(header) if h.startswith("y")]
    noise = np.unique(body[:, header.index("noise_std")])
    if noise.size != 1:
        raise DomainError("a single noise level per observation file is supported")
    loc = body[:, xi]
    if loc.shape[1] == 1:
        loc = loc[:, 0]
    vals = body[:, yi]
    if vals.shape[1] == 1:
        vals = vals[:, 0]
    return ObservationSet(loc, vals, float(noise[0]))


# ---------------------------------------------------------------------------
# regression and convolution
# ---------------------------------------------------------------------------


def regression_potential(u_at_obs, obs: ObservationSet):
    """Gaussian misfit sum (u_j - y_j)^2 / (2 gamma^2) and its gradient in u_j."""
    r = np.asarray(u_at_obs, dtype=float) - obs.values
    g2 = obs.noise_std ** 2
    return 0.5 * float(np.dot(r, r)) / g2, r / g2


def convolution_damping(n, rate=0.1):
    """Mode-wise multipliers e^{-rate i}, i = 1..n."""
    return np.exp(-rate * np.arange(1, n + 1))


def convolution_forward(coeffs, x, rate=0.1):
    """K(u)(x) = sum_i e^{-rate i} c_i sqrt(2) cos(i pi x), with c_i = rho_i zeta_i."""
    coeffs = np.asarray(coeffs, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(x > 1):
        raise DomainError("convolution model lives on (0, 1)")
    i = np.arange(1, coeffs.shape[-1] + 1)
    B = math.sqrt(2.0) * np.cos(np.pi * np.outer(x, i))
    return B @ (convolution_damping(coeffs.shape[-1], rate) * coeffs)


# ---------------------------------------------------------------------------
# Darcy flow
# ---------------------------------------------------------------------------


@dataclass
class DarcyProblem:
    """-div(u grad p) = f on (0,1)^d, p = 0 on the boundary.

    Vertex-centred grid with ``n`` nodes per axis including the boundary;
    permeability and pressure are nodal values.  ``source`` is a constant or
    an array of nodal values.
    """

    n: int
    dim: int = 2
    source: object = 1.0
    cg_threshold: int = 40000
    _A_pattern: Optional[tuple] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.n < 3:
            raise DomainError("grid needs at least three nodes per axis")
        if self.dim not in (1, 2):
            raise DomainError("Darcy problems are supported in one or two dimensions")

    @property
    def h(self):
        return 1.0 / (self.n - 1)

    @property
    def axis(self):
        return np.linspace(0.0, 1.0, self.n)

    @property
    def shape(self):
        return (self.n,) * self.dim

    def source_values(self):
        f = np.asarray(self.source, dtype=float)
        if f.ndim == 0:
            return np.full(self.shape, float(f))
        return f.reshape(self.shape)

    def node_points(self):
        if self.dim == 1:
            return self.axis[:, None]
        X, Y = np.meshgrid(self.axis, self.axis, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()])

    def nearest_nodes(self, points):
        """Flat node indices closest to ``points``; warns if any point is off-grid."""
        pts = np.asarray(points, dtype=float).reshape(-1, self.dim)
        idx = np.rint(pts / self.h).astype(int)
        idx = np.clip(idx, 0, self.n - 1)
        if not np.allclose(idx * self.h, pts, atol=1e-9):
            warnings.warn("observation locations snapped to nearest grid nodes", RuntimeWarning)
        if self.dim == 1:
            return idx[:, 0]
        return np.ravel_multi_index((idx[:, 0], idx[:, 1]), self.shape)


def _harmonic(a, b):
    return 2.0 * a * b / (a + b)


def _assemble(perm, prob: DarcyProblem):
    n, h = prob.n, prob.h
    m = n - 2
    if prob.dim == 1:
        kf = _harmonic(perm[:-1], perm[1:]) / h ** 2  # faces i+1/2, i = 0..n-2
        diag = kf[:-1] + kf[1:]
        off = -kf[1:-1]
        A = sparse.diags([off, diag, off], [-1, 0, 1], shape=(m, m), format="csc")
        return A
    # 2-D: interior nodes (i, j), i, j = 1..n-2, flattened row-major
    kx = _harmonic(perm[:-1, :], perm[1:, :]) / h ** 2  # between (i, j) and (i+1, j)
    ky = _harmonic(perm[:, :-1], perm[:, 1:]) / h ** 2  # between (i, j) and (i, j+1)
    west = kx[:-1, 1:-1]
    east = kx[1:, 1:-1]
    south = ky[1:-1, :-1]
    north = ky[1:-1, 1:]
    diag = (west + east + south + north).ravel()
    idx = np.arange(m * m).reshape(m, m)
    rows = [idx.ravel()]
    cols = [idx.ravel()]
    vals = [diag]
    # couplings to interior neighbours only; boundary values are zero
    rows += [idx[1:, :].ravel(), idx[:-1, :].ravel(), idx[:, 1:].ravel(), idx[:, :-1].ravel()]
    cols += [idx[:-1, :].ravel(), idx[1:, :].ravel(), idx[:, :-1].ravel(), idx[:, 1:].ravel()]
    vals += [-west[1:, :].ravel(), -east[:-1, :].ravel(), -south[:, 1:].ravel(), -north[:, :-1].ravel()]
    A = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m * m, m * m)
    )
    return A


def darcy_solve(perm, prob: DarcyProblem, rtol=1e-10):
    """Nodal pressure from the flux scheme with harmonic-mean face permeabilities."""
    perm = np.asarray(perm, dtype=float).reshape(prob.shape)
    if not np.all(np.isfinite(perm)) or np.any(perm <= 0):
        raise DomainError("permeability must be strictly positive")
    A = _assemble(perm, prob)
    f = prob.source_values()
    b = f[(slice(1, -1),) * prob.dim].ravel()
    if A.shape[0] <= prob.cg_threshold:
        x = splinalg.spsolve(A.tocsc(), b)
    else:
        d = A.diagonal()
        M = sparse.diags(1.0 / d)
        x, info = splinalg.cg(A, b, rtol=rtol, M=M, maxiter=10 * A.shape[0])
        if info != 0:
            raise NumericError("conjugate gradient did not converge")
    bnorm = np.linalg.norm(b)
    if bnorm > 0 and np.linalg.norm(A @ x - b) > max(rtol, 1e-10) * bnorm * 10:
        raise NumericError("Darcy linear solve residual too large")
    p = np.zeros(prob.shape)
    p[(slice(1, -1),) * prob.dim] = x.reshape((prob.n - 2,) * prob.dim)
    return p


def darcy_potential(perm, prob: DarcyProblem, obs: ObservationSet, nodes=None):
    """Gaussian misfit of nodal pressures at the observation locations."""
    if nodes is None:
        nodes = prob.nearest_nodes(obs.locations)
    p = darcy_solve(perm, prob).ravel()
    r = p[nodes] - obs.values
    return 0.5 * float(np.dot(r, r)) / obs.noise_std ** 2


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------


def levelset_classification_potential(v, labelled, labels, gamma):
    """(1 / 2 gamma) sum_j |(S v)(x_j) - y_j| over labelled nodes (Euclidean norm).

    ``v`` has shape (k, N); ``labels`` are class indices or (J, k) one-hots.
    """
    if not gamma > 0:
        raise DomainError("gamma must be positive")
    v = np.asarray(v, dtype=float)
    k, n = v.shape
    labelled = np.asarray(labelled, dtype=int)
    if labelled.size and (labelled.min() < 0 or labelled.max() >= n):
        raise DomainError("labelled index outside the graph")
    y = np.asarray(labels)
    if y.ndim == 1:
        y = np.eye(k)[y.astype(int)]
    pred = vector_levelset_map(v[:, labelled])
    diff = np.sqrt(np.sum((pred - y) ** 2, axis=1))
    return float(diff.sum()) / (2.0 * gamma)


def probit_potential(v_at_obs, y, gamma):
    """-sum log F(v_j y_j / gamma) with its gradient, evaluated in the log domain."""
    v = np.asarray(v_at_obs, dtype=float)
    y = np.asarray(y, dtype=float)
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise DomainError("probit labels must be +1 or -1")
    z = v * y / gamma
    logF = special.log_ndtr(z)
    ratio = np.exp(-0.5 * z * z - LOG_SQRT_2PI - logF)  # F'(z) / F(z)
    return float(-logF.sum()), -y * ratio / gamma

"""Whittle-Matern fields, Cholesky whitening and graph-Laplacian priors."""

from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import linalg, special
from scipy.spatial import cKDTree

from .errors import DomainError, NumericError
from .transforms import CosineBasis, WhiteNoiseVector, _as_coords


@dataclass(frozen=True)
class MaternParams:
    sigma: float = 1.0
    tau: float = 1.0
    regularity: float = 1.0
    dim: int = 1

    def __post_init__(self):
        if not (self.sigma > 0 and self.tau > 0 and self.regularity > 0):
            raise DomainError("Matern sigma, tau and regularity must be positive")
        if self.dim < 1:
            raise DomainError("dimension must be at least one")

    def with_tau(self, tau):
        return MaternParams(self.sigma, tau, self.regularity, self.dim)


def matern_covariance(x, x2, p: MaternParams):
    """sigma^2 2^{1-nu} / Gamma(nu) (tau r)^nu K_nu(tau r), r = |x - x2|.

    ``x`` and ``x2`` are single points or broadcastable arrays of points with
    the coordinate axis last (scalars are treated as 1-D points).
    """
    x = np.asarray(x, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x.ndim == 0:
        x = x[None]
    if x2.ndim == 0:
        x2 = x2[None]
    if x.shape[-1] != x2.shape[-1]:
        raise DomainError("points must have the same dimension")
    r = np.sqrt(np.sum((x - x2) ** 2, axis=-1))
    return _matern_of_distance(r, p)


def _matern_of_distance(r, p: MaternParams):
    r = np.asarray(r, dtype=float)
    nu = p.regularity
    tr = p.tau * r
    out = np.full(r.shape, p.sigma ** 2)
    pos = tr > 0
    t = tr[pos]
    # log form avoids overflow of t^nu against underflow of K_nu
    with np.errstate(under="ignore"):
        logk = np.log(special.kve(nu, t)) - t
        out[pos] = p.sigma ** 2 * np.exp((1.0 - nu) * math.log(2.0) - special.gammaln(nu) + nu * np.log(t) + logk)
    return out if out.ndim else float(out)


def matern_kernel(p: MaternParams) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Kernel function returning the covariance matrix between two point sets."""

    def kernel(X, Y):
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if Y.ndim == 1:
            Y = Y[:, None]
        r = np.sqrt(np.maximum(np.sum((X[:, None, :] - Y[None, :, :]) ** 2, axis=-1), 0.0))
        return _matern_of_distance(r, p)

    return kernel


def matern_q(regularity, dim):
    """q(nu) = 2^d pi^{d/2} Gamma(nu + d/2) / Gamma(nu)."""
    return math.exp(
        dim * math.log(2.0) + 0.5 * dim * math.log(math.pi)
        + special.gammaln(regularity + dim / 2.0) - special.gammaln(regularity)
    )


@dataclass
class SpectralRep:
    eigenvalues: np.ndarray
    basis: CosineBasis


def matern_eigenvalues(p: MaternParams, modes, lengths):
    """Eigenvalues of the Neumann covariance operator for the given cosine modes.

    lambda_k = sigma^2 tau^{2 nu} q(nu) (tau^2 + pi^2 sum_i (k_i / L_i)^2)^{-(nu + d/2)},
    which is the inverse of the precision sigma^{-2} tau^{-2 nu} q^{-1}(tau^2 - Laplacian)^{nu + d/2}.
    """
    modes = np.asarray(modes, dtype=float)
    lengths = np.asarray(lengths, dtype=float)
    wave2 = np.pi ** 2 * np.sum((modes / lengths) ** 2, axis=1)
    nu, d = p.regularity, p.dim
    logc = 2.0 * math.log(p.sigma) + 2.0 * nu * math.log(p.tau) + math.log(matern_q(nu, d))
    return np.exp(logc - (nu + d / 2.0) * np.log(p.tau ** 2 + wave2))


def kl_eigenpairs_rectangle(p: MaternParams, n_modes, lower=None, upper=None, extension=1.0):
    """Karhunen-Loeve pairs of the Matern field on a rectangle with Neumann conditions.

    ``extension`` > 1 enlarges the rectangle about its centre by that factor
    so that samples restricted to the original rectangle feel less of the
    boundary (the returned basis lives on the enlarged rectangle).
    """
    if n_modes <= 0:
        raise DomainError("number of modes must be positive")
    if extension < 1.0:
        raise DomainError("extension factor must be at least one")
    d = p.dim
    lo = np.zeros(d) if lower is None else np.asarray(lower, dtype=float)
    hi = np.ones(d) if upper is None else np.asarray(upper, dtype=float)
    centre, half = 0.5 * (lo + hi), 0.5 * (hi - lo) * extension
    basis = CosineBasis(d, n_modes, include_constant=True, orthonormal=True,
                        lower=centre - half, upper=centre + half)
    lam = matern_eigenvalues(p, basis.modes, basis.lengths)
    return SpectralRep(lam, basis)


class KLField:
    """Whitened Matern field T(xi, tau) on a tensor grid, via the KL expansion.

    sigma and the regularity are fixed; tau may be varied per call, which is
    what the non-centred hierarchical sampler needs.
    """

    def __init__(self, params: MaternParams, n_modes, axes: Sequence[np.ndarray], extension=1.0):
        self.params = params
        rep = kl_eigenpairs_rectangle(params, n_modes, extension=extension)
        self.basis = rep.basis
        self.axes = [np.asarray(a, dtype=float) for a in axes]
        if len(self.axes) != params.dim:
            raise DomainError("one axis array per dimension is required")
        self._cache_tau = None
        self._sqrt_lam = None

    def __len__(self):
        return self.basis.n_modes

    def sqrt_eigenvalues(self, tau=None):
        tau = self.params.tau if tau is None else tau
        if tau != self._cache_tau:
            lam = matern_eigenvalues(self.params.with_tau(tau), self.basis.modes, self.basis.lengths)
            self._sqrt_lam = np.sqrt(lam)
            self._cache_tau = tau
        return self._sqrt_lam

    def __call__(self, xi, tau=None):
        coords, _ = _as_coords(xi)
        if coords.shape[-1] != len(self):
            raise DomainError("white noise truncation does not match the number of modes")
        return self.basis.synthesize_tensor(self.sqrt_eigenvalues(tau) * coords, self.axes)


def cholesky_whiten(points, kernel, max_points=4000, max_retries=4):
    """Lower factor Q with Q Q^T = C_n, where C_n = kernel(points, points).

    Diagonal jitter starts at 1e-12 trace/n and grows tenfold per retry.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    n = pts.shape[0]
    if n > max_points:
        raise DomainError(f"{n} points exceed the Cholesky cap of {max_points}")
    C = np.asarray(kernel(pts, pts), dtype=float)
    C = 0.5 * (C + C.T)
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        pass
    jitter = 1e-12 * np.trace(C) / n
    for _ in range(max_retries):
        try:
            return np.linalg.cholesky(C + jitter * np.eye(n))
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NumericError("covariance matrix is not positive definite after jitter escalation")


# ---------------------------------------------------------------------------
# graphs
# ---------------------------------------------------------------------------


@dataclass
class GraphLaplacian:
    weights: np.ndarray
    degrees: np.ndarray
    laplacian: np.ndarray


def self_tuning_weights(features, knn_k=7):
    """w_ij = exp(-|x_i - x_j|^2 / (2 s_i s_j)), s_i the distance to the k-th neighbour."""
    X = np.asarray(features, dtype=float)
    n = X.shape[0]
    if n < 2:
        raise DomainError("graph needs at least two nodes")
    if not 1 <= knn_k < n:
        raise DomainError("knn_k must satisfy 1 <= knn_k < N")
    tree = cKDTree(X)
    dist, _ = tree.query(X, k=knn_k + 1)
    s = dist[:, knn_k]
    if np.any(s <= 0.0):
        warnings.warn("duplicate points give zero local scale; flooring at 1e-12", RuntimeWarning)
        s = np.maximum(s, 1e-12)
    sq = np.sum(X * X, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * X @ X.T, 0.0)
    W = np.exp(-d2 / (2.0 * np.outer(s, s)))
    np.fill_diagonal(W, 0.0)
    return 0.5 * (W + W.T)


def normalized_laplacian(W):
    """L = I - D^{-1/2} W D^{-1/2}."""
    W = np.asarray(W, dtype=float)
    deg = W.sum(axis=1)
    if np.any(deg <= 0):
        raise DomainError("graph has isolated nodes")
    dinv = 1.0 / np.sqrt(deg)
    L = np.eye(W.shape[0]) - dinv[:, None] * W * dinv[None, :]
    return GraphLaplacian(W, deg, 0.5 * (L + L.T))


def graph_laplacian(features, knn_k=7):
    return normalized_laplacian(self_tuning_weights(features, knn_k))


@dataclass
class GraphPrior:
    """Spectral Gaussian prior N(0, C(alpha, M)) on graph nodes.

    ``eigenvalues``/``eigenvectors`` hold the smallest eigenpairs of L in
    ascending order; the transform uses the first M + 1 of them.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    alpha: float = 1.0
    M: Optional[int] = None

    def __post_init__(self):
        if self.M is None:
            self.M = len(self.eigenvalues) - 1
        if self.M + 1 > len(self.eigenvalues):
            raise DomainError("M exceeds the number of stored eigenpairs")

    @property
    def n_nodes(self):
        return self.eigenvectors.shape[0]

    def covariance(self, alpha=None, M=None):
        alpha = self.alpha if alpha is None else alpha
        M = self.M if M is None else M
        Q = self.eigenvectors[:, : M + 1]
        return (Q * (1.0 + self.eigenvalues[: M + 1]) ** (-alpha)) @ Q.T


def graph_spectrum(L, n_eig=None):
    """Smallest eigenpairs of a symmetric Laplacian, ascending."""
    L = np.asarray(L, dtype=float)
    n = L.shape[0]
    if n_eig is None or n_eig >= n:
        vals, vecs = linalg.eigh(L)
    else:
        vals, vecs = linalg.eigh(L, subset_by_index=[0, n_eig - 1])
    return vals, vecs


def spectral_prior_transform(gp: GraphPrior, xi, alpha=None, M=None):
    """sum_{j=0}^{M} (1 + lambda_j)^{-alpha/2} xi_j q_j.

    ``xi`` may carry extra trailing coordinates beyond M + 1 (they are
    ignored) and a leading class axis.
    """
    alpha = gp.alpha if alpha is None else alpha
    M = gp.M if M is None else int(M)
    if not alpha > 0:
        raise DomainError("alpha must be positive")
    coords, _ = _as_coords(xi)
    if coords.shape[-1] < M + 1:
        raise DomainError("white noise truncation must be at least M + 1")
    scale = (1.0 + gp.eigenvalues[: M + 1]) ** (-alpha / 2.0)
    return (coords[..., : M + 1] * scale) @ gp.eigenvectors[:, : M + 1].T


def features_key(features, knn_k):
    h = hashlib.sha256(np.ascontiguousarray(features, dtype=np.float64).tobytes()).hexdigest()
    return f"{h[:16]}_k{knn_k}"


def cached_graph_spectrum(features, knn_k=7, n_eig=None, cache_dir=None):
    """Graph spectrum, memoised on disk as ``<hash>_k<knn>.npz`` when cache_dir is set."""
    path = None
    if cache_dir is not None:
        cache_dir = Path(cache_dir)
        cache_dir.mkdir(parents=True, exist_ok=True)
        path = cache_dir / f"{features_key(features, knn_k)}_n{n_eig}.npz"
        if path.exists():
            with np.load(path) as data:
                return data["eigenvalues"], data["eigenvectors"]
    lap = graph_laplacian(features, knn_k)
    vals, vecs = graph_spectrum(lap.laplacian, n_eig)
    if path is not None:
        np.savez(path, eigenvalues=vals, eigenvectors=vecs)
    return vals, vecs

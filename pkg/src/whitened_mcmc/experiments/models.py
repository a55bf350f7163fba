"""Synthetic-truth inverse problems used by the experiment runners."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from ..errors import DomainError
from ..forward_models import (DarcyProblem, ObservationSet, darcy_potential, darcy_solve,
                              levelset_classification_potential)
from ..gaussian_field import GraphPrior, KLField, MaternParams, cached_graph_spectrum, spectral_prior_transform
from ..transforms import (BesovLaw, CosineBasis, EvaluationGrid, LevelSetSpec, SeriesPrior, SeriesTransform,
                          UniformLaw, lambda_besov, levelset_index, levelset_map)
from .config import ExperimentConfig
from .io import ingest_mnist_idx, load_features, make_clusters, pca_project

# integer tags that name independent random streams under the master seed
TRUTH, NOISE, INIT, CHAIN, PILOT, LABELS = 1, 2, 3, 4, 5, 6


def stream(seed, *keys):
    """Generator keyed by (master seed, tags...); the same keys give the same stream."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *(int(k) for k in keys)]))


def _value_and_derivative(law, xi):
    if isinstance(law, BesovLaw):
        return lambda_besov(xi, law.q)
    return law.transform(xi), law.derivative(xi)


class SeriesRegression:
    """Gaussian misfit of a series prior observed at points.

    Provides the whitened potential (and gradient) on xi and, for random-walk
    comparators, the potential and prior log-density on the coefficients
    c_j = rho_j zeta_j.
    """

    def __init__(self, transform: SeriesTransform, obs: ObservationSet):
        self.T = transform
        self.obs = obs
        self.rho = transform.prior.weights
        self.law = transform.prior.law
        self.prec = 1.0 / obs.noise_std ** 2

    def __len__(self):
        return len(self.T)

    def potential(self, xi):
        r = self.T(xi) - self.obs.values
        return 0.5 * self.prec * float(r @ r)

    def potential_and_grad(self, xi):
        val, der = _value_and_derivative(self.law, xi)
        r = self.T.mean + self.T.matrix @ (self.rho * val) - self.obs.values
        g = self.rho * der * (self.T.matrix.T @ (self.prec * r))
        return 0.5 * self.prec * float(r @ r), g

    def coeff_potential(self, c):
        r = self.T.mean + self.T.matrix @ c - self.obs.values
        return 0.5 * self.prec * float(r @ r)

    def coeff_log_prior(self, c):
        return self.law.log_density(c / self.rho)

    def coeff_prior_sample(self, rng):
        return self.rho * self.law.sample(rng, len(self))


# ---------------------------------------------------------------------------
# Besov regression on the unit square
# ---------------------------------------------------------------------------


def besov_square_prior(N, q, kappa, s):
    basis = CosineBasis(2, N, orthonormal=False)
    rho = 1.0 / np.sum(basis.modes ** 2, axis=1)
    return SeriesPrior(rho, basis, BesovLaw(q, kappa, s))


@dataclass
class Fig1Problem:
    points: np.ndarray
    truth_xi: np.ndarray
    obs: ObservationSet

    def model(self, N, cfg: ExperimentConfig):
        prior = besov_square_prior(N, cfg.besov_q, cfg.besov_kappa, cfg.besov_s)
        return SeriesRegression(SeriesTransform(prior, EvaluationGrid(self.points)), self.obs)


def fig1_problem(cfg: ExperimentConfig) -> Fig1Problem:
    m = int(cfg.obs_per_axis)
    a = np.arange(1, m + 1) / (m + 1.0)
    X, Y = np.meshgrid(a, a, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    n_truth = int(cfg.truth_modes)
    if n_truth < max(cfg.get_list("N_values")):
        raise DomainError("truth_modes must be at least the largest N")
    xi = stream(cfg.seed, TRUTH).standard_normal(n_truth)
    prior = besov_square_prior(n_truth, cfg.besov_q, cfg.besov_kappa, cfg.besov_s)
    u = SeriesTransform(prior, EvaluationGrid(pts))(xi)
    y = u + cfg.noise * stream(cfg.seed, NOISE).standard_normal(len(u))
    return Fig1Problem(pts, xi, ObservationSet(pts, y, cfg.noise))


# ---------------------------------------------------------------------------
# deconvolution on the unit interval
# ---------------------------------------------------------------------------


def convolution_prior(n, damping, mean):
    """Uniform series prior for K(u): weights e^{-damping i} / i^2, constant mean passed through."""
    i = np.arange(1, n + 1)
    basis = CosineBasis(1, n, orthonormal=True)
    return SeriesPrior(np.exp(-damping * i) / i ** 2, basis, UniformLaw(), mean=float(mean))


@dataclass
class ConvolutionProblem:
    truth_xi: np.ndarray
    observations: Dict[int, ObservationSet]

    def model(self, J, cfg: ExperimentConfig):
        obs = self.observations[J]
        prior = convolution_prior(int(cfg.n_coeffs), cfg.damping, cfg.mean)
        return SeriesRegression(SeriesTransform(prior, EvaluationGrid(obs.locations)), obs)


def convolution_problem(cfg: ExperimentConfig) -> ConvolutionProblem:
    """Equally spaced data y_j = K(u)(x_j) + noise.

    The noise level makes the expected relative error E|noise| / |K(u)(x_j)|,
    averaged over the design, equal to ``relative_noise``.
    """
    n_truth = int(cfg.truth_coeffs)
    xi = stream(cfg.seed, TRUTH).standard_normal(n_truth)
    prior = convolution_prior(n_truth, cfg.damping, cfg.mean)
    observations = {}
    for J in cfg.get_list("obs_counts"):
        J = int(J)
        x = np.arange(1, J + 1) / (J + 1.0)
        clean = SeriesTransform(prior, EvaluationGrid(x))(xi)
        noise_std = cfg.relative_noise * float(np.mean(np.abs(clean))) / math.sqrt(2.0 / math.pi)
        y = clean + noise_std * stream(cfg.seed, NOISE, J).standard_normal(J)
        observations[J] = ObservationSet(x, y, noise_std)
    return ConvolutionProblem(xi, observations)


def l2_norm_of_field(xi, mean, n):
    """|u|_{L^2(0,1)} for u = mean + sum_i i^{-2} Lambda(xi_i) sqrt(2) cos(i pi x)."""
    i = np.arange(1, n + 1)
    c = UniformLaw().transform(xi) / i ** 2
    return math.sqrt(mean ** 2 + float(c @ c))


# ---------------------------------------------------------------------------
# Darcy flow with a level-set permeability
# ---------------------------------------------------------------------------


def disc_mode_count(n):
    """Number of cosine modes k in [0, n-1]^2 with |k| <= n - 1."""
    k = np.arange(n)
    return int(np.sum(k[:, None] ** 2 + k[None, :] ** 2 <= (n - 1) ** 2))


def observation_nodes(n, per_axis):
    """Node indices round(i (n-1) / (m+1)), i = 1..m, along each axis."""
    idx = np.rint(np.arange(1, per_axis + 1) * (n - 1) / (per_axis + 1.0)).astype(int)
    I, J = np.meshgrid(idx, idx, indexing="ij")
    return I.ravel(), J.ravel()


class DarcyLevelSet:
    """Phi(levelset(T(xi, tau))) for pressure data on a vertex grid."""

    def __init__(self, cfg: ExperimentConfig, n: int, obs: Optional[ObservationSet] = None, nodes=None):
        self.prob = DarcyProblem(n, 2, float(cfg.source))
        self.params = MaternParams(cfg.sigma, cfg.tau_fixed, cfg.regularity, 2)
        self.field = KLField(self.params, disc_mode_count(n), [self.prob.axis, self.prob.axis])
        self.spec = LevelSetSpec(cfg.get_list("perm_levels"), cfg.get_list("thresholds"))
        self.obs = obs
        self.nodes = nodes

    def __len__(self):
        return len(self.field)

    def latent(self, xi, tau):
        return self.field(xi, tau)

    def permeability(self, xi, tau):
        return levelset_map(self.latent(xi, tau), self.spec)

    def classes(self, latent):
        return levelset_index(latent, self.spec)

    def potential(self, xi, theta):
        return darcy_potential(self.permeability(xi, theta["tau"]), self.prob, self.obs, self.nodes)


@dataclass
class DarcyProblemData:
    model: DarcyLevelSet
    truth_classes: np.ndarray
    truth_xi: np.ndarray


def darcy_problem(cfg: ExperimentConfig) -> DarcyProblemData:
    """Truth drawn from the prior at tau_true on a grid twice as fine.

    Data come from the fine solve at the nodes shared with the coarse grid,
    so inversion does not reuse the data-generating discretisation.
    """
    n = int(cfg.grid)
    nf = 2 * n - 1
    fine = DarcyLevelSet(cfg, nf)
    xi_t = stream(cfg.seed, TRUTH).standard_normal(len(fine))
    latent_f = fine.latent(xi_t, cfg.tau_true)
    p = darcy_solve(levelset_map(latent_f, fine.spec), fine.prob)
    I, J = observation_nodes(n, int(cfg.obs_per_axis))
    clean = p[2 * I, 2 * J]
    y = clean + cfg.noise * stream(cfg.seed, NOISE).standard_normal(clean.shape)
    h = 1.0 / (n - 1)
    obs = ObservationSet(np.column_stack([I * h, J * h]), y, cfg.noise)
    nodes = np.ravel_multi_index((I, J), (n, n))
    model = DarcyLevelSet(cfg, n, obs, nodes)
    truth = fine.classes(latent_f)[::2, ::2]
    return DarcyProblemData(model, truth, xi_t)


# ---------------------------------------------------------------------------
# graph-based classification
# ---------------------------------------------------------------------------


@dataclass
class GraphData:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int


def graph_data(cfg: ExperimentConfig) -> GraphData:
    feats_path = str(cfg.features or "")
    if feats_path:
        labels_path = str(cfg.labels or "")
        if not labels_path:
            raise DomainError("a labels file is required alongside the features")
        if feats_path.endswith("ubyte") or labels_path.endswith("ubyte"):
            X, y = ingest_mnist_idx(feats_path, labels_path)
        else:
            X = load_features(feats_path)
            y = load_features(labels_path).astype(int).ravel()
        if len(X) != len(y):
            raise DomainError("feature and label counts differ")
        if int(cfg.pca_dim) and X.shape[1] > int(cfg.pca_dim):
            X = pca_project(X, int(cfg.pca_dim))
        classes, y = np.unique(y, return_inverse=True)
        return GraphData(X, y, len(classes))
    k = int(cfg.n_classes)
    X, y = make_clusters(int(cfg.n_nodes), k, int(cfg.feature_dim), float(cfg.separation), stream(cfg.seed, TRUTH))
    return GraphData(X, y, k)


def initial_labelled(labels, fraction, n_classes, rng, max_tries=1000):
    """Random labelled subset of size round(fraction N) that contains every class."""
    n = len(labels)
    size = max(int(round(fraction * n)), n_classes)
    for _ in range(max_tries):
        pick = np.sort(rng.choice(n, size=size, replace=False))
        if len(np.unique(labels[pick])) == n_classes:
            return pick
    raise DomainError("could not draw a labelled set covering every class")


class GraphClassifier:
    """Level-set classification on a graph with a hierarchical spectral prior.

    The white noise has shape (k, M_max + 1), flattened for the samplers.
    """

    def __init__(self, data: GraphData, cfg: ExperimentConfig):
        self.k = data.n_classes
        self.n_eig = int(cfg.M_upper) + 1
        if self.n_eig > len(data.labels):
            raise DomainError("M_upper must be below the number of nodes")
        cache = str(cfg.cache_dir or "") or None
        vals, vecs = cached_graph_spectrum(data.features, int(cfg.knn), self.n_eig, cache)
        self.prior = GraphPrior(vals, vecs)
        self.gamma = float(cfg.gamma)
        self.labelled = np.array([], dtype=int)
        self.observed = np.array([], dtype=int)

    @property
    def dim(self):
        return self.k * self.n_eig

    def set_labels(self, labelled, labels):
        self.labelled = np.asarray(labelled, dtype=int)
        self.observed = np.asarray(labels, dtype=int)

    def latent(self, xi, theta):
        return spectral_prior_transform(self.prior, xi.reshape(self.k, self.n_eig), theta["alpha"], int(theta["M"]))

    def potential(self, xi, theta):
        return levelset_classification_potential(self.latent(xi, theta), self.labelled, self.observed, self.gamma)

    def consistent_start(self, xi, theta):
        """Smallest change to ``xi`` after which every labelled node is classified correctly.

        With gamma this small a random start violates labels at a cost of
        thousands of nats each, and pCN moves cannot climb out.  The
        correction sets the true-class latent one prior standard deviation
        above the best competitor, solving the minimum-norm least-squares
        problem for the active coordinates.
        """
        xi = np.array(xi, dtype=float).reshape(self.k, self.n_eig)
        if self.labelled.size == 0:
            return xi.ravel()
        M = int(theta["M"])
        scale = (1.0 + self.prior.eigenvalues[: M + 1]) ** (-float(theta["alpha"]) / 2.0)
        A = self.prior.eigenvectors[self.labelled, : M + 1] * scale
        v = xi[:, : M + 1] @ A.T
        margin = float(np.sqrt(np.sum(A ** 2, axis=1)).mean())
        target = v.copy()
        cols = np.arange(self.labelled.size)
        rival = np.where(np.eye(self.k, dtype=bool)[self.observed].T, -np.inf, v).max(axis=0)
        target[self.observed, cols] = np.maximum(v[self.observed, cols], rival + margin)
        xi[:, : M + 1] += np.linalg.lstsq(A, (target - v).T, rcond=None)[0].T
        return xi.ravel()

import math

import numpy as np
import pytest
from scipy import special

from whitened_mcmc import errors
from whitened_mcmc.gaussian_field import (GraphPrior, KLField, MaternParams, cached_graph_spectrum,
                                          cholesky_whiten, graph_laplacian, graph_spectrum, kl_eigenpairs_rectangle,
                                          matern_covariance, matern_eigenvalues, matern_kernel, matern_q,
                                          normalized_laplacian, self_tuning_weights, spectral_prior_transform)


class TestMaternCovariance:
    def test_zero_distance(self):
        p = MaternParams(sigma=1.7, tau=3.0, regularity=1.5, dim=2)
        assert matern_covariance([0.2, 0.3], [0.2, 0.3], p) == pytest.approx(1.7 ** 2)

    def test_exponential_case(self):
        p = MaternParams(1.0, 1.0, 0.5, 1)
        assert matern_covariance(0.0, 1.0, p) == pytest.approx(math.exp(-1.0), rel=1e-12)
        assert matern_covariance(0.0, 1.0, p) == pytest.approx(0.367879, abs=1e-6)

    def test_closed_form_three_halves(self):
        # nu = 3/2: sigma^2 (1 + t) e^{-t}
        p = MaternParams(0.8, 2.0, 1.5, 1)
        r = np.linspace(0.01, 3, 20)
        got = matern_covariance(np.zeros((20, 1)), r[:, None], p)
        np.testing.assert_allclose(got, 0.64 * (1 + 2 * r) * np.exp(-2 * r), rtol=1e-12)

    def test_decreasing_and_symmetric(self):
        p = MaternParams(1.0, 4.0, 2.3, 2)
        r = np.linspace(0, 5, 50)
        vals = matern_covariance(np.zeros((50, 2)), np.column_stack([r, 0 * r]), p)
        assert np.all(np.diff(vals) < 0) and np.all(vals > 0)
        x, y = np.array([0.1, 0.9]), np.array([0.4, 0.2])
        assert matern_covariance(x, y, p) == matern_covariance(y, x, p)

    def test_dimension_mismatch(self):
        with pytest.raises(errors.DomainError):
            matern_covariance([0.0, 1.0], [0.0], MaternParams())

    @pytest.mark.parametrize("kw", [dict(sigma=0), dict(tau=-1), dict(regularity=0)])
    def test_invalid_params(self, kw):
        with pytest.raises(errors.DomainError):
            MaternParams(**kw)


class TestKLEigenpairs:
    def test_q_of_one(self):
        assert matern_q(1.0, 1) == pytest.approx(math.pi)

    def test_first_eigenvalue(self):
        rep = kl_eigenpairs_rectangle(MaternParams(1, 1, 1, 1), 4)
        assert rep.eigenvalues[1] == pytest.approx(math.pi * (1 + math.pi ** 2) ** -1.5, rel=1e-12)
        # pi (1 + pi^2)^{-3/2} = 0.0876656...; the commonly quoted 0.087672 is within 1e-5
        assert rep.eigenvalues[1] == pytest.approx(0.087672, abs=1e-5)

    def test_constant_mode(self):
        p = MaternParams(1.3, 2.5, 0.7, 2)
        lam0 = matern_eigenvalues(p, np.zeros((1, 2)), np.ones(2))[0]
        expected = p.sigma ** 2 * p.tau ** (2 * p.regularity) * matern_q(0.7, 2) * p.tau ** (-2 * p.regularity - 2)
        assert lam0 == pytest.approx(expected, rel=1e-12)

    def test_decreasing(self):
        rep = kl_eigenpairs_rectangle(MaternParams(1, 5, 1, 2), 60)
        norms = np.sum(rep.basis.modes ** 2, axis=1)
        lam = rep.eigenvalues
        assert np.all(np.diff(lam)[np.diff(norms) > 0] < 0)

    def test_bad_count(self):
        with pytest.raises(errors.DomainError):
            kl_eigenpairs_rectangle(MaternParams(), 0)

    def test_kl_covariance_matches_kernel_in_interior(self):
        # the exact KL covariance sum_j lambda_j phi_j(x) phi_j(y) against the Matern kernel;
        # tau = 40 keeps the Neumann reflection term C(2x) negligible for x >= 0.1
        p = MaternParams(1.0, 40.0, 1.5, 1)
        rep = kl_eigenpairs_rectangle(p, 2000)
        x = np.linspace(0.1, 0.9, 41)
        B = rep.basis.evaluate(x)
        C_kl = (B * rep.eigenvalues) @ B.T
        C = matern_kernel(p)(x, x)
        assert np.max(np.abs(C_kl - C)) <= 0.05 * p.sigma ** 2

    def test_kl_field_sample_covariance(self):
        p = MaternParams(1.0, 40.0, 1.0, 1)
        axis = np.linspace(0, 1, 41)
        field = KLField(p, 200, [axis])
        n = 20000
        xi = np.random.default_rng(0).standard_normal((n, 200))
        samples = np.array([field(x) for x in xi])
        C = np.cov(samples.T)
        inner = (axis >= 0.1) & (axis <= 0.9)
        C_true = matern_kernel(p)(axis, axis)
        mc_allowance = 4 * math.sqrt(2.0 / n)
        assert np.max(np.abs(C - C_true)[np.ix_(inner, inner)]) <= 0.05 + mc_allowance

    def test_kl_field_tau_override(self):
        axis = np.linspace(0, 1, 5)
        field = KLField(MaternParams(1, 5, 1, 2), 30, [axis, axis])
        xi = np.random.default_rng(1).standard_normal(30)
        other = KLField(MaternParams(1, 9, 1, 2), 30, [axis, axis])
        np.testing.assert_allclose(field(xi, 9.0), other(xi), atol=1e-13)
        with pytest.raises(errors.DomainError):
            field(np.zeros(7))


class TestCholesky:
    def test_single_point(self):
        Q = cholesky_whiten(np.array([[0.3]]), matern_kernel(MaternParams(sigma=2.0)))
        np.testing.assert_allclose(Q, [[2.0]])

    def test_diagonal_kernel(self):
        d = np.array([1.0, 4.0, 9.0])

        def kernel(X, Y):
            return np.diag(d) if X.shape == Y.shape else None

        np.testing.assert_allclose(cholesky_whiten(np.zeros((3, 1)), kernel), np.diag([1.0, 2.0, 3.0]))

    def test_reconstruction(self):
        pts = np.random.default_rng(2).uniform(size=(5, 2))
        kern = matern_kernel(MaternParams(1.2, 3.0, 1.5, 2))
        Q = cholesky_whiten(pts, kern)
        C = kern(pts, pts)
        assert np.linalg.norm(Q @ Q.T - C) <= 1e-8 * np.linalg.norm(C)
        assert np.allclose(Q, np.tril(Q))

    def test_semidefinite_gets_jitter(self):
        pts = np.array([[0.1], [0.1], [0.5]])
        kern = matern_kernel(MaternParams(1, 2, 2.5, 1))
        Q = cholesky_whiten(pts, kern)
        C = kern(pts, pts)
        assert np.linalg.norm(Q @ Q.T - C) <= 1e-8 * np.linalg.norm(C)

    def test_indefinite_fails(self):
        def kernel(X, Y):
            return np.array([[1.0, 2.0], [2.0, 1.0]])

        with pytest.raises(errors.NumericError):
            cholesky_whiten(np.zeros((2, 1)), kernel)

    def test_point_cap(self):
        with pytest.raises(errors.DomainError):
            cholesky_whiten(np.zeros((6, 1)), matern_kernel(MaternParams()), max_points=5)

    def test_matches_kl_second_moments(self):
        p = MaternParams(1.0, 8.0, 1.0, 1)
        pts = np.array([0.3, 0.45, 0.6])
        Q = cholesky_whiten(pts[:, None], matern_kernel(p))
        field = KLField(p, 400, [pts])
        rng = np.random.default_rng(3)
        chol = rng.standard_normal((40000, 3)) @ Q.T
        kl = np.array([field(x) for x in rng.standard_normal((40000, 400))])
        np.testing.assert_allclose(np.cov(chol.T), np.cov(kl.T), atol=0.06)


def _toy_features(n=50, seed=0):
    rng = np.random.default_rng(seed)
    return np.vstack([rng.normal(0, 1, (n // 2, 3)), rng.normal(4, 1, (n - n // 2, 3))])


class TestGraphLaplacian:
    def test_two_nodes(self):
        L = normalized_laplacian(np.array([[0.0, 1.0], [1.0, 0.0]])).laplacian
        np.testing.assert_allclose(L, [[1, -1], [-1, 1]])
        np.testing.assert_allclose(np.linalg.eigvalsh(L), [0, 2], atol=1e-14)

    def test_null_vector_and_spectrum(self):
        g = graph_laplacian(_toy_features(), knn_k=7)
        L, W = g.laplacian, g.weights
        np.testing.assert_array_equal(L, L.T)
        d = W.sum(axis=1)
        np.testing.assert_allclose(L @ np.sqrt(d), 0.0, atol=1e-10)
        vals = np.linalg.eigvalsh(L)
        assert vals.min() >= -1e-10 and vals.max() <= 2 + 1e-10
        assert abs(vals[0]) < 1e-10

    def test_self_tuning_weights_formula(self):
        X = _toy_features(12, seed=4)
        W = self_tuning_weights(X, knn_k=3)
        D = np.linalg.norm(X[:, None] - X[None], axis=-1)
        s = np.sort(D, axis=1)[:, 3]
        expected = np.exp(-D ** 2 / (2 * np.outer(s, s)))
        np.fill_diagonal(expected, 0.0)
        np.testing.assert_allclose(W, expected, rtol=1e-12)

    def test_duplicates_warn(self):
        X = np.zeros((4, 2))
        with pytest.warns(RuntimeWarning):
            W = self_tuning_weights(X, knn_k=2)
        assert np.all(np.isfinite(W))

    def test_knn_too_large(self):
        with pytest.raises(errors.DomainError):
            graph_laplacian(np.zeros((3, 2)), knn_k=3)


class TestSpectralPrior:
    def setup_method(self):
        L = graph_laplacian(_toy_features(), knn_k=7).laplacian
        vals, vecs = graph_spectrum(L)
        self.gp = GraphPrior(vals, vecs, alpha=2.0, M=10)

    def test_orthonormal(self):
        Q = self.gp.eigenvectors
        np.testing.assert_allclose(Q.T @ Q, np.eye(Q.shape[1]), atol=1e-8)
        assert np.all(np.diff(self.gp.eigenvalues) >= 0)

    def test_zero_and_first_mode(self):
        np.testing.assert_array_equal(spectral_prior_transform(self.gp, np.zeros(11)), 0.0)
        xi = np.zeros(11)
        xi[0] = 1.7
        out = spectral_prior_transform(self.gp, xi, M=0)
        np.testing.assert_allclose(out, (1 + self.gp.eigenvalues[0]) ** -1.0 * 1.7 * self.gp.eigenvectors[:, 0])

    def test_empirical_covariance(self):
        xi = np.random.default_rng(5).standard_normal((100000, 11))
        samples = spectral_prior_transform(self.gp, xi)
        assert np.max(np.abs(samples.T @ samples / len(xi) - self.gp.covariance())) <= 0.02

    def test_alpha_positive(self):
        with pytest.raises(errors.DomainError):
            spectral_prior_transform(self.gp, np.zeros(11), alpha=0.0)

    def test_truncation_too_short(self):
        with pytest.raises(errors.DomainError):
            spectral_prior_transform(self.gp, np.zeros(5))

    def test_permutation_equivariance(self):
        X = _toy_features(30, seed=7)
        perm = np.random.default_rng(8).permutation(30)
        v1, q1 = graph_spectrum(graph_laplacian(X).laplacian)
        v2, q2 = graph_spectrum(graph_laplacian(X[perm]).laplacian)
        np.testing.assert_allclose(v1, v2, atol=1e-10)
        # covariance is basis-independent, so compare it rather than sign-ambiguous vectors
        C1 = GraphPrior(v1, q1, 1.5).covariance()
        C2 = GraphPrior(v2, q2, 1.5).covariance()
        np.testing.assert_allclose(C1[np.ix_(perm, perm)], C2, atol=1e-10)

    def test_partial_spectrum_matches_full(self):
        L = graph_laplacian(_toy_features(), knn_k=7).laplacian
        v_all, _ = graph_spectrum(L)
        v_part, q_part = graph_spectrum(L, 6)
        np.testing.assert_allclose(v_part, v_all[:6], atol=1e-12)
        assert q_part.shape == (50, 6)

    def test_disk_cache(self, tmp_path):
        X = _toy_features(20)
        a = cached_graph_spectrum(X, 5, 8, tmp_path)
        assert len(list(tmp_path.glob("*.npz"))) == 1
        b = cached_graph_spectrum(X, 5, 8, tmp_path)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])

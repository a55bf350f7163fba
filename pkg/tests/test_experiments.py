import math
import struct

import numpy as np
import pytest

from whitened_mcmc import errors
from whitened_mcmc.experiments import cli
from whitened_mcmc.experiments.config import ExperimentConfig, load_config, parse_config_text, parse_value
from whitened_mcmc.experiments.io import (ingest_mnist_idx, load_features, make_clusters, pca_project,
                                          read_idx_images, read_idx_labels, write_idx_images, write_idx_labels)
from whitened_mcmc.experiments.models import (GraphClassifier, convolution_problem, disc_mode_count, fig1_problem,
                                              graph_data, initial_labelled, l2_norm_of_field, observation_nodes,
                                              stream)
from whitened_mcmc.experiments.runners import (run_active_learning, run_convolution_acf, run_darcy_hier,
                                               run_fig1_sweep, run_graph_ssl)

SMALL = {
    "fig1_sweep": dict(N_values=[4, 16], betas=[0.01, 0.2], kernels=["wpcn", "wmala", "rwm_white", "rwm_prior"],
                       steps=1300, burn_in=200, truth_modes=64),
    "convolution_acf": dict(n_coeffs=32, truth_coeffs=128, steps=1500, burn_in=200, max_lag=20, pilot_steps=200),
    "darcy_hier": dict(grid=9, steps=200, burn_in=50),
    "graph_ssl": dict(n_nodes=60, steps=400, burn_in=100, M_upper=20, M_init=5),
    "active_learning": dict(n_nodes=60, steps=300, burn_in=100, M_upper=20, M_init=5, rounds=2, batch=5),
}


def small(experiment, tmp_path, **extra):
    vals = dict(SMALL[experiment], out=str(tmp_path / experiment))
    vals.update(extra)
    return ExperimentConfig(experiment, vals)


class TestConfig:
    def test_parse_text(self):
        vals = parse_config_text("# comment\nexperiment = fig1_sweep\nsteps = 5000  # inline\n"
                                 "betas = 0.1, 0.2\nflag = true\nname = abc\n")
        assert vals == {"experiment": "fig1_sweep", "steps": 5000, "betas": [0.1, 0.2], "flag": True,
                        "name": "abc"}

    def test_parse_value(self):
        assert parse_value("3") == 3 and isinstance(parse_value("3"), int)
        assert parse_value("1e-4") == 1e-4
        assert parse_value("a, b") == ["a", "b"]

    def test_duplicate_and_malformed(self):
        with pytest.raises(errors.FormatError):
            parse_config_text("a = 1\na = 2\n")
        with pytest.raises(errors.FormatError):
            parse_config_text("just words\n")

    def test_unknown_key_and_experiment(self):
        with pytest.raises(errors.DomainError):
            ExperimentConfig("fig1_sweep", {"not_a_key": 1})
        with pytest.raises(errors.DomainError):
            ExperimentConfig("fig2", {})

    def test_steps_exceed_burn_in(self):
        with pytest.raises(errors.DomainError):
            ExperimentConfig("darcy_hier", {"steps": 100, "burn_in": 100})

    def test_hash_ignores_output_location(self):
        a = ExperimentConfig("graph_ssl", {"out": "x"})
        b = ExperimentConfig("graph_ssl", {"out": "y", "workers": 4})
        c = ExperimentConfig("graph_ssl", {"seed": 1})
        assert a.config_hash() == b.config_hash() != c.config_hash()
        assert a.header() == f"experiment=graph_ssl config_hash={a.config_hash()} seed=0"

    def test_load_file_with_overrides(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("experiment = darcy_hier\ngrid = 16\nseed = 3\n")
        cfg = load_config(path, None, {"seed": 7, "beta": None})
        assert cfg.grid == 16 and cfg.seed == 7 and cfg.beta == 0.1
        with pytest.raises(errors.DomainError):
            load_config(path, "graph_ssl")

    def test_replace(self):
        cfg = ExperimentConfig("graph_ssl", {})
        assert cfg.replace(seed=4).seed == 4 and cfg.seed == 0


class TestIdx:
    def test_round_trip_bytes(self, tmp_path):
        rng = np.random.default_rng(0)
        imgs = rng.integers(0, 256, (3, 4, 5), dtype=np.uint8)
        labs = np.array([7, 0, 9], dtype=np.uint8)
        write_idx_images(tmp_path / "i", imgs)
        write_idx_labels(tmp_path / "l", labs)
        np.testing.assert_array_equal(read_idx_images(tmp_path / "i"), imgs)
        np.testing.assert_array_equal(read_idx_labels(tmp_path / "l"), labs)
        write_idx_images(tmp_path / "i2", read_idx_images(tmp_path / "i"))
        assert (tmp_path / "i").read_bytes() == (tmp_path / "i2").read_bytes()
        raw = (tmp_path / "i").read_bytes()
        assert raw[:16] == struct.pack(">IIII", 0x803, 3, 4, 5)

    def test_ingest_scales_pixels(self, tmp_path):
        imgs = np.zeros((2, 2, 2), dtype=np.uint8)
        imgs[0, 0, 0] = 255
        write_idx_images(tmp_path / "i", imgs)
        write_idx_labels(tmp_path / "l", np.array([1, 2], dtype=np.uint8))
        X, y = ingest_mnist_idx(tmp_path / "i", tmp_path / "l")
        assert X.shape == (2, 4) and X[0, 0] == 1.0 and X[1].max() == 0.0
        np.testing.assert_array_equal(y, [1, 2])

    def test_truncated(self, tmp_path):
        path = tmp_path / "l"
        path.write_bytes(struct.pack(">II", 0x801, 10) + bytes(9))
        with pytest.raises(errors.FormatError):
            read_idx_labels(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "l"
        path.write_bytes(struct.pack(">II", 0x803, 1) + bytes(1))
        with pytest.raises(errors.FormatError):
            read_idx_labels(path)

    def test_count_mismatch(self, tmp_path):
        write_idx_images(tmp_path / "i", np.zeros((3, 2, 2), dtype=np.uint8))
        write_idx_labels(tmp_path / "l", np.zeros(2, dtype=np.uint8))
        with pytest.raises(errors.FormatError):
            ingest_mnist_idx(tmp_path / "i", tmp_path / "l")


class TestPCA:
    def test_full_rank_is_isometry(self):
        X = np.random.default_rng(1).normal(size=(30, 4))
        Z = pca_project(X, 4)
        d = lambda A: np.linalg.norm(A[:, None, :] - A[None, :, :], axis=-1)
        np.testing.assert_allclose(d(Z), d(X), atol=1e-8)

    def test_rank_one(self):
        rng = np.random.default_rng(2)
        X = np.outer(rng.normal(size=50), [1.0, -2.0, 0.5])
        Z = pca_project(X, 3)
        var = Z.var(axis=0)
        assert var[0] / var.sum() >= 0.9999

    def test_brute_force_oracle(self):
        X = np.random.default_rng(3).normal(size=(5, 3))
        Xc = X - X.mean(axis=0)
        # SVD of the centred data gives the same directions as the covariance eigenvectors
        _, _, Vt = np.linalg.svd(Xc, full_matrices=False)
        V = Vt[:2].T
        V = V * np.sign(V[np.argmax(np.abs(V), axis=0), [0, 1]])
        np.testing.assert_allclose(pca_project(X, 2), Xc @ V, atol=1e-8)

    def test_invalid_d(self):
        with pytest.raises(errors.DomainError):
            pca_project(np.zeros((5, 3)), 4)
        with pytest.raises(errors.DomainError):
            pca_project(np.zeros((5, 3)), 0)

    def test_load_features(self, tmp_path):
        X = np.arange(6.0).reshape(3, 2)
        np.save(tmp_path / "f.npy", X)
        np.savetxt(tmp_path / "f.csv", X, delimiter=",")
        np.testing.assert_array_equal(load_features(tmp_path / "f.npy"), X)
        np.testing.assert_array_equal(load_features(tmp_path / "f.csv"), X)
        with pytest.raises(FileNotFoundError):
            load_features(tmp_path / "missing.csv")


class TestSyntheticData:
    @pytest.mark.parametrize("k,dim", [(2, 5), (4, 5), (3, 2)])
    def test_clusters(self, k, dim):
        X, y = make_clusters(100, k, dim, 3.0, np.random.default_rng(0))
        counts = np.bincount(y, minlength=k)
        assert counts.max() - counts.min() <= 1 and X.shape == (100, dim)

    def test_cluster_centres_equidistant(self):
        rng = np.random.default_rng(0)
        X, y = make_clusters(4000, 3, 2, 5.0, rng)
        c = np.array([X[y == r].mean(axis=0) for r in range(3)])
        dists = [np.linalg.norm(c[i] - c[j]) for i in range(3) for j in range(i + 1, 3)]
        np.testing.assert_allclose(dists, 5.0, rtol=0.05)

    def test_labelled_set_covers_classes(self):
        labels = np.repeat([0, 1, 2, 3], 50)
        pick = initial_labelled(labels, 0.05, 4, np.random.default_rng(1))
        assert len(pick) == 10 and set(labels[pick]) == {0, 1, 2, 3}

    def test_streams(self):
        a = stream(0, 1, 2).standard_normal(3)
        np.testing.assert_array_equal(a, stream(0, 1, 2).standard_normal(3))
        assert not np.array_equal(a, stream(0, 2, 1).standard_normal(3))

    def test_mode_count_and_nodes(self):
        assert disc_mode_count(3) == sum(1 for a in range(3) for b in range(3) if a * a + b * b <= 4)
        I, J = observation_nodes(64, 6)
        assert len(I) == 36 and I.min() > 0 and I.max() < 63

    def test_norm_of_field(self):
        xi = np.zeros(5)
        assert l2_norm_of_field(xi, 2.0, 5) == pytest.approx(2.0)


class TestModels:
    def test_fig1_gradient(self, tmp_path):
        cfg = small("fig1_sweep", tmp_path)
        model = fig1_problem(cfg).model(16, cfg)
        xi = np.random.default_rng(0).standard_normal(16)
        _, g = model.potential_and_grad(xi)
        h = 1e-5
        fd = [(model.potential(xi + h * e) - model.potential(xi - h * e)) / (2 * h) for e in np.eye(16)]
        np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-6 * np.abs(g).max())

    def test_convolution_gradient(self, tmp_path):
        cfg = small("convolution_acf", tmp_path)
        model = convolution_problem(cfg).model(8, cfg)
        xi = np.random.default_rng(1).standard_normal(len(model))
        phi, g = model.potential_and_grad(xi)
        assert phi == pytest.approx(model.potential(xi), rel=1e-12)
        h = 1e-5
        fd = [(model.potential(xi + h * e) - model.potential(xi - h * e)) / (2 * h) for e in np.eye(len(xi))]
        np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-7 * np.abs(g).max())

    def test_coefficient_space_matches_white_space(self, tmp_path):
        cfg = small("fig1_sweep", tmp_path)
        model = fig1_problem(cfg).model(16, cfg)
        xi = np.random.default_rng(2).standard_normal(16)
        from whitened_mcmc.transforms import lambda_besov
        c = model.rho * lambda_besov(xi, 1.0)[0]
        assert model.coeff_potential(c) == pytest.approx(model.potential(xi), rel=1e-12)

    def test_consistent_start_satisfies_labels(self, tmp_path):
        cfg = small("active_learning", tmp_path)
        data = graph_data(cfg)
        model = GraphClassifier(data, cfg)
        lab = initial_labelled(data.labels, 0.1, data.n_classes, np.random.default_rng(0))
        model.set_labels(lab, data.labels[lab])
        theta = {"alpha": 10.0, "M": 5}
        xi = model.consistent_start(np.random.default_rng(1).standard_normal(model.dim), theta)
        assert model.potential(xi, theta) == 0.0


class TestRunners:
    def test_fig1(self, tmp_path):
        res = run_fig1_sweep(small("fig1_sweep", tmp_path))
        lines = res.path.read_text().splitlines()
        assert lines[0].startswith("# experiment=fig1_sweep config_hash=")
        assert lines[1] == "kernel,N,beta,mean_accept,se,accept_rate"
        assert len(lines) == 2 + 4 * 2 * 2
        assert 0 <= res.value("wpcn", 16, 0.01).mean_accept <= 1

    def test_convolution(self, tmp_path):
        res = run_convolution_acf(small("convolution_acf", tmp_path))
        for col in res.acf.values():
            assert col[0] == 1.0 and len(col) == 21
        assert set(res.acf) == {"wpcn_J8", "wmala_J8", "wpcn_J32", "wmala_J32"}
        assert res.tuning_path.exists()

    def test_convolution_lag_bound(self, tmp_path):
        with pytest.raises(errors.DomainError):
            run_convolution_acf(small("convolution_acf", tmp_path, max_lag=2000))

    def test_darcy(self, tmp_path):
        res = run_darcy_hier(small("darcy_hier", tmp_path))
        assert np.all((res.tau_trace >= 1) & (res.tau_trace <= 100))
        assert set(res.misclassified) == {"fixed", "hierarchical"}
        assert all(p.exists() for p in res.paths.values())

    def test_graph(self, tmp_path):
        res = run_graph_ssl(small("graph_ssl", tmp_path))
        np.testing.assert_allclose(res.inference.mean_onehot.sum(axis=1), 1.0)
        assert res.labelled_accuracy == 1.0
        assert all(p.exists() for p in res.paths.values())

    def test_active_learning(self, tmp_path):
        res = run_active_learning(small("active_learning", tmp_path))
        unc, cer = res.trajectory("most_uncertain"), res.trajectory("most_certain")
        assert unc[0][3] == cer[0][3]
        assert [r[2] for r in unc] == [4, 9, 14]
        assert [r[2] for r in cer] == [4, 9, 14]

    def test_active_learning_exhausts(self, tmp_path):
        res = run_active_learning(small("active_learning", tmp_path, batch=40, rounds=3))
        traj = res.trajectory("most_uncertain")
        assert traj[-1][5] == 1 and len(traj) == 2

    def test_convolution_wmala_decorrelates_faster_with_32_observations(self, tmp_path):
        res = run_convolution_acf(ExperimentConfig("convolution_acf", {"out": str(tmp_path)}))
        assert res.acf["wmala_J32"][50] <= res.acf["wpcn_J32"][50]


class TestCli:
    def test_runs_and_prints_paths(self, tmp_path, capsys):
        out = tmp_path / "o"
        code = cli.main(["graph_ssl", "--out", str(out), "--steps", "300", "--set", "burn_in=100",
                         "--set", "n_nodes=40", "--set", "M_upper=10", "--set", "M_init=3"])
        assert code == 0
        printed = capsys.readouterr().out.split()
        assert str(out / "graph_summary.csv") in printed

    def test_config_file(self, tmp_path, capsys):
        path = tmp_path / "run.cfg"
        path.write_text(f"experiment = darcy_hier\nout = {tmp_path / 'd'}\nsteps = 60\nburn_in = 10\n")
        assert cli.main(["--config", str(path), "--grid", "9"]) == 0
        assert (tmp_path / "d" / "darcy_summary.csv").exists()

    @pytest.mark.parametrize("argv", [
        ["convolution_acf", "--beta", "0.1"],
        ["graph_ssl", "--grid", "32"],
        ["graph_ssl", "--set", "nonsense"],
        ["graph_ssl", "--set", "unknown_key=1"],
        ["fig1_sweep", "--steps", "500", "--set", "burn_in=100"],
        ["graph_ssl", "--set", "features=missing.npy"],
        [],
    ])
    def test_errors_exit_two(self, argv, tmp_path, capsys):
        assert cli.main(argv + ["--out", str(tmp_path)]) == 2
        assert "error:" in capsys.readouterr().err

    def test_beta_list_for_fig1(self):
        args = cli.build_parser().parse_args(["fig1_sweep", "--beta", "0.1,0.2"])
        assert cli.overrides_from_args(args, "fig1_sweep")["betas"] == [0.1, 0.2]


class TestDeterminism:
    @pytest.mark.parametrize("experiment", ["fig1_sweep", "convolution_acf", "darcy_hier", "graph_ssl",
                                            "active_learning"])
    def test_byte_identical(self, experiment, tmp_path):
        from whitened_mcmc.experiments.runners import run_experiment

        def files(sub):
            res = run_experiment(small(experiment, tmp_path / sub))
            paths = getattr(res, "paths", None) or {"table": res.path}
            return {k: p.read_bytes() for k, p in paths.items()}

        assert files("a") == files("b")

    def test_worker_count_does_not_change_output(self, tmp_path):
        from whitened_mcmc.experiments.runners import run_experiment

        one = run_experiment(small("fig1_sweep", tmp_path / "one")).path.read_bytes()
        two = run_experiment(small("fig1_sweep", tmp_path / "two", workers=2)).path.read_bytes()
        assert one == two

"""Experiment runners.  Each writes CSV artifacts and returns a result summary.

Every CSV starts with a ``# experiment=... config_hash=... seed=...`` line.
Output depends only on (config, seed): each independent cell derives its own
random stream from the master seed and cell keys, and results are assembled
in a fixed order even when cells run in a process pool.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List

import numpy as np

from ..diagnostics import (AcceptanceCell, autocorrelation, cell_from_record, confusion_matrix,
                           select_active_batch, uncertainty_measure, write_table_csv)
from ..errors import DomainError
from ..samplers import RWM, WMALA, WPCN, HyperParam, HyperPrior, NonCentredGibbs, run_chain
from ..transforms import vector_levelset_map
from .config import ExperimentConfig
from .models import (CHAIN, INIT, LABELS, PILOT, GraphClassifier, convolution_problem, darcy_problem,
                     fig1_problem, graph_data, initial_labelled, l2_norm_of_field, stream)


def _pool_map(func, tasks, workers):
    if workers <= 1 or len(tasks) <= 1:
        return [func(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(func, *zip(*tasks)))


def _beta_key(beta):
    return int(round(float(beta) * 1e12))


def _run_with_burn_in(kernel, initial, cfg, rng, steps=None, **kw):
    """Burn in, then run the recorded segment from the burnt-in state."""
    steps = int(cfg.steps) if steps is None else steps
    burn = int(cfg.burn_in)
    state = initial
    if burn:
        state = run_chain(kernel, initial, burn, rng, store_samples=False).final_state
    return run_chain(kernel, state, steps - burn, rng, thin=int(cfg.thin), **kw)


# ---------------------------------------------------------------------------
# acceptance versus step size
# ---------------------------------------------------------------------------

FIG1_KERNELS = ("wpcn", "wmala", "rwm_white", "rwm_prior")
_FIG1_CACHE: Dict[str, object] = {}


def _fig1_cached(cfg):
    key = cfg.config_hash()
    if key not in _FIG1_CACHE:
        _FIG1_CACHE.clear()
        _FIG1_CACHE[key] = fig1_problem(cfg)
    return _FIG1_CACHE[key]


def fig1_cell(cfg: ExperimentConfig, kernel: str, beta: float, N: int) -> AcceptanceCell:
    """Mean acceptance probability of one (kernel, beta, N) chain after burn-in.

    Whitened kernels start from the truncated truth white noise, random-walk
    kernels from the matching coefficients, so burn-in is short.
    """
    problem = _fig1_cached(cfg)
    model = problem.model(N, cfg)
    xi0 = problem.truth_xi[:N]
    if kernel == "wpcn":
        kern, init = WPCN(model.potential, beta), xi0
    elif kernel == "wmala":
        kern, init = WMALA.from_beta(model.potential_and_grad, beta), xi0
    elif kernel in ("rwm_white", "rwm_prior"):
        variant = kernel.split("_")[1]
        kern = RWM(model.coeff_potential, model.coeff_log_prior, beta, variant, model.coeff_prior_sample)
        init = model.rho * model.law.transform(xi0)
    else:
        raise DomainError(f"unknown kernel {kernel!r}")
    rng = stream(cfg.seed, CHAIN, FIG1_KERNELS.index(kernel), N, _beta_key(beta))
    rec = _run_with_burn_in(kern, init, cfg, rng, store_samples=False)
    return cell_from_record(kernel, beta, N, rec)


@dataclass
class Fig1Result:
    cells: List[AcceptanceCell]
    path: Path

    def curve(self, kernel, N):
        rows = sorted((c for c in self.cells if c.kernel == kernel and c.N == N), key=lambda c: c.beta)
        return np.array([c.beta for c in rows]), np.array([c.mean_accept for c in rows])

    def value(self, kernel, N, beta):
        for c in self.cells:
            if c.kernel == kernel and c.N == N and c.beta == beta:
                return c
        raise KeyError((kernel, N, beta))


def run_fig1_sweep(cfg: ExperimentConfig) -> Fig1Result:
    if int(cfg.steps) - int(cfg.burn_in) < 1000:
        raise DomainError("acceptance sweeps need at least 1000 recorded steps per cell")
    kernels = [str(k) for k in cfg.get_list("kernels")]
    tasks = [(cfg, k, float(b), int(N)) for k in kernels
             for N in cfg.get_list("N_values") for b in cfg.get_list("betas")]
    cells = _pool_map(fig1_cell, tasks, int(cfg.workers))
    path = cfg.out_dir / "fig1_acceptance.csv"
    write_table_csv(path, ["kernel", "N", "beta", "mean_accept", "se", "accept_rate"],
                    [(c.kernel, c.N, c.beta, c.mean_accept, c.se, c.accept_rate) for c in cells],
                    comment=cfg.header())
    return Fig1Result(cells, path)


# ---------------------------------------------------------------------------
# autocorrelation of |u| for the deconvolution problem
# ---------------------------------------------------------------------------


def _make_kernel(name, model, beta):
    if name == "wpcn":
        return WPCN(model.potential, beta)
    return WMALA.from_beta(model.potential_and_grad, beta)


def convolution_column(cfg: ExperimentConfig, kernel: str, J: int):
    """Tune beta by a coarse pilot grid, then record the ACF of |u|_{L^2}."""
    problem = convolution_problem(cfg)
    model = problem.model(J, cfg)
    n = len(model)
    xi0 = problem.truth_xi[:n]
    kid = 0 if kernel == "wpcn" else 1
    target = cfg.target_wpcn if kernel == "wpcn" else cfg.target_wmala
    grid = np.geomspace(1e-3, 1.0, 13)
    best = None
    for b in grid:
        rec = run_chain(_make_kernel(kernel, model, b), xi0, int(cfg.pilot_steps),
                        stream(cfg.seed, PILOT, kid, J, _beta_key(b)), store_samples=False)
        acc = rec.mean_accept_prob()
        if best is None or abs(acc - target) < abs(best[1] - target):
            best = (float(b), acc)
    beta = best[0]
    kern = _make_kernel(kernel, model, beta)
    mean = float(cfg.mean)
    norm = {"norm": lambda s: l2_norm_of_field(s.xi, mean, n)}
    rec = _run_with_burn_in(kern, xi0, cfg, stream(cfg.seed, CHAIN, kid, J), store_samples=False, summaries=norm)
    series = np.asarray(rec.summaries["norm"][1:])
    acf = autocorrelation(series, int(cfg.max_lag))
    h = getattr(kern, "h", float("nan"))
    return acf, (kernel, J, beta, h, best[1], rec.acceptance_rate())


@dataclass
class ConvolutionResult:
    acf: Dict[str, np.ndarray]
    tuning: List[tuple]
    path: Path
    tuning_path: Path

    @property
    def paths(self):
        return {"acf": self.path, "tuning": self.tuning_path}


def run_convolution_acf(cfg: ExperimentConfig) -> ConvolutionResult:
    if int(cfg.max_lag) >= int(cfg.steps) - int(cfg.burn_in):
        raise DomainError("max_lag must be below the number of recorded steps")
    tasks = [(cfg, k, int(J)) for J in cfg.get_list("obs_counts") for k in ("wpcn", "wmala")]
    results = _pool_map(convolution_column, tasks, int(cfg.workers))
    cols = {f"{k}_J{J}": r[0] for (_, k, J), r in zip(tasks, results)}
    names = list(cols)
    out = cfg.out_dir
    path = out / "convolution_acf.csv"
    write_table_csv(path, ["lag"] + names,
                    [[lag] + [cols[c][lag] for c in names] for lag in range(int(cfg.max_lag) + 1)],
                    comment=cfg.header())
    tuning = [r[1] for r in results]
    tpath = out / "convolution_tuning.csv"
    write_table_csv(tpath, ["kernel", "observations", "beta", "h", "pilot_accept", "accept_rate"], tuning,
                    comment=cfg.header())
    return ConvolutionResult(cols, tuning, path, tpath)


# ---------------------------------------------------------------------------
# hierarchical Darcy level-set inversion
# ---------------------------------------------------------------------------


class _MeanAccumulator:
    def __init__(self, burn_in, value):
        self.burn_in = burn_in
        self.value = value
        self.total = None
        self.count = 0

    def __call__(self, k, state):
        if k > self.burn_in:
            v = self.value(state)
            self.total = v.copy() if self.total is None else self.total + v
            self.count += 1

    @property
    def mean(self):
        return self.total / self.count


def darcy_run(cfg: ExperimentConfig, hierarchical: bool):
    data = darcy_problem(cfg)
    model = data.model
    xi0 = stream(cfg.seed, INIT).standard_normal(len(model))
    tau0 = float(cfg.tau_fixed)
    if hierarchical:
        hyper = HyperPrior([HyperParam("tau", tau0, cfg.tau_lower, cfg.tau_upper, cfg.tau_walk, log_walk=True)])
        kern = NonCentredGibbs(model.potential, hyper, cfg.beta)
        init = kern.init(xi0)
    else:
        fixed = {"tau": tau0}
        kern = WPCN(lambda xi: model.potential(xi, fixed), cfg.beta)
        init = kern.init(xi0)
        init.theta = fixed
    acc = _MeanAccumulator(int(cfg.burn_in), lambda s: model.latent(s.xi, s.theta["tau"]))
    rec = run_chain(kern, init, int(cfg.steps), stream(cfg.seed, CHAIN, int(hierarchical)),
                    thin=int(cfg.thin), burn_in=int(cfg.burn_in), store_samples=False, callback=acc)
    classes = model.classes(acc.mean)
    wrong = float(np.mean(classes != data.truth_classes))
    return rec, acc.mean, classes, wrong, data.truth_classes


@dataclass
class DarcyResult:
    misclassified: Dict[str, float]
    tau_trace: np.ndarray
    tau_posterior_var: float
    tau_prior_var: float
    acceptance: Dict[str, float]
    paths: Dict[str, Path] = field(default_factory=dict)


def run_darcy_hier(cfg: ExperimentConfig) -> DarcyResult:
    runs = _pool_map(darcy_run, [(cfg, False), (cfg, True)], int(cfg.workers))
    (rec_f, mean_f, cls_f, wrong_f, truth), (rec_h, mean_h, cls_h, wrong_h, _) = runs
    out = cfg.out_dir
    head = cfg.header()
    tau = np.array([t["tau"] for t in rec_h.theta[1:]])
    lo, hi = float(cfg.tau_lower), float(cfg.tau_upper)
    prior_var = (hi - lo) ** 2 / 12.0
    post_var = float(np.var(tau, ddof=1)) if len(tau) > 1 else float("nan")
    paths = {}
    paths["summary"] = out / "darcy_summary.csv"
    write_table_csv(paths["summary"],
                    ["run", "tau", "misclassified_fraction", "accept_xi", "accept_tau", "tau_mean", "tau_var",
                     "tau_prior_var"],
                    [("fixed", float(cfg.tau_fixed), wrong_f, rec_f.acceptance_rate(0), "", "", "", ""),
                     ("hierarchical", "", wrong_h, rec_h.acceptance_rate(0), rec_h.acceptance_rate(1),
                      float(tau.mean()), post_var, prior_var)],
                    comment=head)
    paths["trace"] = out / "darcy_tau_trace.csv"
    rec_h.to_csv(paths["trace"], header_comment=head)
    n = int(cfg.grid)
    axis = np.linspace(0.0, 1.0, n)
    X, Y = np.meshgrid(axis, axis, indexing="ij")
    paths["fields"] = out / "darcy_fields.csv"
    write_table_csv(paths["fields"],
                    ["x", "y", "truth_class", "fixed_mean", "fixed_class", "hier_mean", "hier_class"],
                    zip(X.ravel(), Y.ravel(), truth.ravel(), mean_f.ravel(), cls_f.ravel(),
                        mean_h.ravel(), cls_h.ravel()),
                    comment=head)
    edges = np.linspace(lo, hi, int(cfg.hist_bins) + 1)
    dens, _ = np.histogram(tau, bins=edges, density=True)
    paths["hist"] = out / "darcy_tau_hist.csv"
    write_table_csv(paths["hist"], ["bin_lower", "bin_upper", "prior_density", "posterior_density"],
                    [(edges[i], edges[i + 1], 1.0 / (hi - lo), dens[i]) for i in range(len(dens))],
                    comment=head)
    return DarcyResult({"fixed": wrong_f, "hierarchical": wrong_h}, tau, post_var, prior_var,
                       {"fixed": rec_f.acceptance_rate(0), "hierarchical_xi": rec_h.acceptance_rate(0),
                        "hierarchical_tau": rec_h.acceptance_rate(1)}, paths)


# ---------------------------------------------------------------------------
# graph semi-supervised classification and active learning
# ---------------------------------------------------------------------------


@dataclass
class GraphInference:
    mean_onehot: np.ndarray
    uncertainty: np.ndarray
    predicted: np.ndarray
    record: object


def graph_inference(model: GraphClassifier, cfg: ExperimentConfig, rng_keys) -> GraphInference:
    hyper = HyperPrior([
        HyperParam("alpha", float(cfg.alpha_init), cfg.alpha_lower, cfg.alpha_upper, cfg.alpha_walk, log_walk=True),
        HyperParam("M", float(cfg.M_init), 1.0, float(cfg.M_upper), integer=True),
    ])
    kern = NonCentredGibbs(model.potential, hyper, cfg.beta)
    xi0 = model.consistent_start(stream(cfg.seed, INIT, *rng_keys).standard_normal(model.dim), hyper.initial())
    acc = _MeanAccumulator(int(cfg.burn_in), lambda s: vector_levelset_map(model.latent(s.xi, s.theta)))
    rec = run_chain(kern, xi0, int(cfg.steps), stream(cfg.seed, CHAIN, *rng_keys), thin=int(cfg.thin),
                    burn_in=int(cfg.burn_in), store_samples=False, callback=acc)
    report = uncertainty_measure(acc.mean)
    predicted = np.argmax(report.mean_onehot, axis=1)
    return GraphInference(report.mean_onehot, report.U, predicted, rec)


@dataclass
class GraphResult:
    accuracy: float
    labelled_accuracy: float
    mean_uncertainty: float
    labelled: np.ndarray
    inference: GraphInference
    paths: Dict[str, Path] = field(default_factory=dict)


def run_graph_ssl(cfg: ExperimentConfig) -> GraphResult:
    data = graph_data(cfg)
    model = GraphClassifier(data, cfg)
    labelled = initial_labelled(data.labels, float(cfg.label_fraction), data.n_classes, stream(cfg.seed, LABELS))
    model.set_labels(labelled, data.labels[labelled])
    inf = graph_inference(model, cfg, (0,))
    mask = np.ones(len(data.labels), dtype=bool)
    mask[labelled] = False
    accuracy = float(np.mean(inf.predicted[mask] == data.labels[mask]))
    lab_acc = float(np.mean(inf.predicted[labelled] == data.labels[labelled]))
    out, head = cfg.out_dir, cfg.header()
    paths = {"nodes": out / "graph_nodes.csv", "confusion": out / "graph_confusion.csv",
             "theta": out / "graph_theta.csv", "summary": out / "graph_summary.csv"}
    k = data.n_classes
    write_table_csv(paths["nodes"],
                    ["node", "true_class", "labelled", "predicted"] + [f"p{j}" for j in range(k)] + ["U"],
                    [[i, data.labels[i], int(not mask[i]), inf.predicted[i]] + list(inf.mean_onehot[i])
                     + [inf.uncertainty[i]] for i in range(len(data.labels))],
                    comment=head)
    conf = confusion_matrix(inf.predicted[mask], data.labels[mask], k)
    write_table_csv(paths["confusion"], ["true_class"] + [f"pred{j}" for j in range(k)],
                    [[i] + list(conf[i]) for i in range(k)], comment=head)
    inf.record.to_csv(paths["theta"], header_comment=head)
    write_table_csv(paths["summary"],
                    ["accuracy", "labelled_accuracy", "mean_uncertainty", "n_labelled", "accept_xi", "accept_theta"],
                    [(accuracy, lab_acc, float(inf.uncertainty.mean()), len(labelled),
                      inf.record.acceptance_rate(0), inf.record.acceptance_rate(1))],
                    comment=head)
    return GraphResult(accuracy, lab_acc, float(inf.uncertainty.mean()), labelled, inf, paths)


def active_learning_trajectory(cfg: ExperimentConfig, mode: str):
    """Rows (mode, round, n_labelled, mean_uncertainty, accuracy, exhausted)."""
    data = graph_data(cfg)
    model = GraphClassifier(data, cfg)
    labelled = initial_labelled(data.labels, float(cfg.label_fraction), data.n_classes, stream(cfg.seed, LABELS))
    batch = int(cfg.batch)
    rows = []
    for r in range(int(cfg.rounds) + 1):
        model.set_labels(labelled, data.labels[labelled])
        # same stream per round for both modes, so round 0 coincides exactly
        inf = graph_inference(model, cfg, (10 + r,))
        mask = np.ones(len(data.labels), dtype=bool)
        mask[labelled] = False
        acc = float(np.mean(inf.predicted[mask] == data.labels[mask])) if mask.any() else 1.0
        exhausted = r < int(cfg.rounds) and batch > int(mask.sum())
        rows.append((mode, r, len(labelled), float(inf.uncertainty.mean()), acc, int(exhausted)))
        if r == int(cfg.rounds) or exhausted:
            break
        report = uncertainty_measure(inf.mean_onehot)
        new = select_active_batch(report, labelled, batch, mode)
        labelled = np.sort(np.concatenate([labelled, new]))
    return rows


@dataclass
class ActiveLearningResult:
    rows: List[tuple]
    path: Path

    def trajectory(self, mode):
        return [r for r in self.rows if r[0] == mode]


def run_active_learning(cfg: ExperimentConfig) -> ActiveLearningResult:
    modes = [str(m) for m in cfg.get_list("modes")]
    trajs = _pool_map(active_learning_trajectory, [(cfg, m) for m in modes], int(cfg.workers))
    rows = [row for t in trajs for row in t]
    path = cfg.out_dir / "active_learning.csv"
    write_table_csv(path, ["mode", "round", "n_labelled", "mean_uncertainty", "accuracy", "exhausted"], rows,
                    comment=cfg.header())
    return ActiveLearningResult(rows, path)


RUNNERS = {
    "fig1_sweep": run_fig1_sweep,
    "convolution_acf": run_convolution_acf,
    "darcy_hier": run_darcy_hier,
    "graph_ssl": run_graph_ssl,
    "active_learning": run_active_learning,
}


def run_experiment(cfg: ExperimentConfig):
    return RUNNERS[cfg.experiment](cfg)

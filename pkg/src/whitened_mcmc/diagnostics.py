"""Post-processing of chains: acceptance sweeps, ACF/ESS, classification uncertainty."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Iterable, List, Sequence

import numpy as np

from .errors import DomainError


def batch_means_se(x, n_batches=20):
    """Standard error of the mean of a correlated series by batch means."""
    x = np.asarray(x, dtype=float)
    n = len(x) // n_batches * n_batches
    if n < n_batches:
        return float("nan")
    means = x[:n].reshape(n_batches, -1).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(n_batches))


@dataclass
class AcceptanceCell:
    kernel: str
    beta: float
    N: int
    mean_accept: float
    se: float
    accept_rate: float


def cell_from_record(kernel, beta, N, record) -> AcceptanceCell:
    """Summarise one chain's first-block acceptance as a table cell."""
    p = record.accept_prob[:, 0]
    return AcceptanceCell(str(kernel), float(beta), int(N), float(p.mean()), batch_means_se(p),
                          record.acceptance_rate())


def acceptance_curve(run_cell: Callable[[str, float, int, int], "object"], kernels: Sequence[str],
                     betas: Sequence[float], N_values: Sequence[int], steps: int) -> List[AcceptanceCell]:
    """Tabulate mean acceptance probability over a (kernel, beta, N) grid.

    ``run_cell(kernel, beta, N, steps)`` returns a ChainRecord; the mean of the
    per-step acceptance probabilities is reported with a batch-means error.
    """
    if steps < 1000:
        raise DomainError("acceptance sweeps need at least 1000 steps per cell")
    return [cell_from_record(kern, beta, N, run_cell(kern, beta, N, steps))
            for kern in kernels for N in N_values for beta in betas]


def write_table_csv(path, header: Sequence[str], rows: Iterable[Sequence], comment=None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def autocorrelation(series, max_lag, return_flag=False):
    """Biased, mean-centred sample autocorrelation for lags 0..max_lag.

    A constant series has no defined ACF; it is reported as 1 at lag 0 and 0
    elsewhere, with the flag set.
    """
    x = np.asarray(series, dtype=float)
    n = len(x)
    if not n > max_lag:
        raise DomainError("series must be longer than max_lag")
    x = x - x.mean()
    c0 = float(np.dot(x, x)) / n
    if c0 == 0.0:
        acf = np.zeros(max_lag + 1)
        acf[0] = 1.0
        return (acf, True) if return_flag else acf
    m = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x, m)
    acov = np.fft.irfft(f * np.conj(f), m)[: max_lag + 1] / n
    acf = acov / acov[0]
    acf[0] = 1.0
    return (acf, False) if return_flag else acf


def ess(series, max_lag=None, return_flag=False):
    """K / (1 + 2 sum_l ACF(l)), truncated by Geyer's initial positive sequence."""
    x = np.asarray(series, dtype=float)
    n = len(x)
    if max_lag is None:
        max_lag = min(n - 1, 10000)
    acf, flat = autocorrelation(x, max_lag, return_flag=True)
    if flat:
        return (0.0, True) if return_flag else 0.0
    # pair sums Gamma_m = rho_{2m} + rho_{2m+1}; keep while positive and monotone
    npairs = (len(acf)) // 2
    gam = acf[: 2 * npairs].reshape(npairs, 2).sum(axis=1)
    total = 0.0
    prev = np.inf
    for g in gam:
        if g <= 0:
            break
        g = min(g, prev)
        total += g
        prev = g
    tau = -1.0 + 2.0 * total
    tau = max(tau, 1.0 / np.log10(max(n, 10)))
    value = n / tau
    return (value, False) if return_flag else value


# ---------------------------------------------------------------------------
# classification uncertainty and active learning
# ---------------------------------------------------------------------------


@dataclass
class UncertaintyReport:
    mean_onehot: np.ndarray
    U: np.ndarray

    @property
    def mean_uncertainty(self):
        return float(self.U.mean())


def uncertainty_measure(mean_onehots, tol=1e-8):
    """U = 1 - k/(k-1) |E(Sv) - c|^2 with c the simplex centre."""
    P = np.asarray(mean_onehots, dtype=float)
    if P.ndim != 2:
        raise DomainError("expected an (N, k) array of mean one-hot vectors")
    k = P.shape[1]
    if k < 2:
        raise DomainError("need at least two classes")
    if np.any(np.abs(P.sum(axis=1) - 1.0) > tol) or np.any(P < -tol):
        raise DomainError("rows must be convex combinations of one-hot vectors")
    d2 = np.sum((P - 1.0 / k) ** 2, axis=1)
    U = 1.0 - k / (k - 1.0) * d2
    return UncertaintyReport(P, np.clip(U, 0.0, 1.0))


def select_active_batch(report: UncertaintyReport, labelled, batch, mode="most_uncertain"):
    """Unlabelled indices with the largest (or smallest) U, in that order; ties by node index."""
    if mode not in ("most_uncertain", "most_certain"):
        raise DomainError("mode must be 'most_uncertain' or 'most_certain'")
    n = len(report.U)
    mask = np.ones(n, dtype=bool)
    mask[np.asarray(list(labelled), dtype=int)] = False
    cand = np.flatnonzero(mask)
    if batch > len(cand):
        raise DomainError("batch exceeds the number of unlabelled nodes")
    if batch == 0:
        return np.array([], dtype=int)
    key = -report.U[cand] if mode == "most_uncertain" else report.U[cand]
    order = np.lexsort((cand, key))
    return cand[order[:batch]]


def confusion_matrix(predicted, true, k, zero_diagonal=True):
    """Row-percentage confusion matrix: entry (i, j) = % of class i predicted as j."""
    predicted = np.asarray(predicted, dtype=int)
    true = np.asarray(true, dtype=int)
    if predicted.shape != true.shape:
        raise DomainError("label vectors must have equal length")
    if predicted.size and (max(predicted.max(), true.max()) >= k or min(predicted.min(), true.min()) < 0):
        raise DomainError("class index outside 0..k-1")
    counts = np.zeros((k, k))
    np.add.at(counts, (true, predicted), 1.0)
    rows = counts.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        pct = np.where(rows > 0, 100.0 * counts / np.where(rows > 0, rows, 1.0), 0.0)
    if zero_diagonal:
        np.fill_diagonal(pct, 0.0)
    return pct

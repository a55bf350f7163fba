"""Metropolis-Hastings kernels on white-noise coordinates and chain orchestration.

Every kernel exposes ``init(xi, theta=None) -> ChainState`` and
``step(state, rng) -> (state, accepted, accept_prob)`` where ``accepted`` and
``accept_prob`` are tuples with one entry per update block.  Randomness only
enters through the ``numpy.random.Generator`` passed to ``step``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .errors import DomainError, NumericError


def spawn_seeds(master_seed, n):
    """Independent child seeds: SeedSequence(master).spawn(n), as integers."""
    children = np.random.SeedSequence(master_seed).spawn(n)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


def _accept(log_ratio, rng):
    """Metropolis decision; consumes exactly one uniform per call."""
    u = rng.random()
    if not np.isfinite(log_ratio):
        return (log_ratio > 0), (1.0 if log_ratio > 0 else 0.0)
    prob = 1.0 if log_ratio >= 0 else math.exp(log_ratio)
    return u < prob, prob


# ---------------------------------------------------------------------------
# hyperparameters
# ---------------------------------------------------------------------------


@dataclass
class HyperParam:
    """Scalar hyperparameter with a uniform prior on [lower, upper].

    Continuous entries use a Gaussian random walk of size ``scale`` (on log
    theta when ``log_walk``); integer entries step by -1 or +1 with equal
    probability.
    """

    name: str
    value: float
    lower: float
    upper: float
    scale: float = 0.1
    integer: bool = False
    log_walk: bool = False

    def __post_init__(self):
        if not self.lower < self.upper:
            raise DomainError(f"{self.name}: lower bound must be below upper bound")
        if self.log_walk and self.lower <= 0:
            raise DomainError(f"{self.name}: log random walk needs a positive support")
        if not self.in_support(self.value):
            raise DomainError(f"{self.name}: initial value outside prior support")

    def in_support(self, x):
        return self.lower <= x <= self.upper and (not self.integer or float(x).is_integer())

    def propose(self, x, rng):
        """Return (proposal, log q(proposal -> x) - log q(x -> proposal))."""
        if self.integer:
            return x + (1 if rng.random() < 0.5 else -1), 0.0
        z = rng.standard_normal()
        if self.log_walk:
            y = x * math.exp(self.scale * z)
            # density of y under the log walk carries a 1/y Jacobian
            return y, math.log(y) - math.log(x)
        return x + self.scale * z, 0.0


class HyperPrior:
    """Independent uniform priors over named hyperparameters."""

    def __init__(self, params: Sequence[HyperParam]):
        self.params = list(params)
        self.names = [p.name for p in self.params]

    def initial(self):
        return {p.name: p.value for p in self.params}

    def in_support(self, theta):
        return all(p.in_support(theta[p.name]) for p in self.params)

    def propose(self, theta, rng):
        new, logq = {}, 0.0
        for p in self.params:
            new[p.name], lq = p.propose(theta[p.name], rng)
            logq += lq
        return new, logq


# ---------------------------------------------------------------------------
# chain state and kernels
# ---------------------------------------------------------------------------


@dataclass
class ChainState:
    xi: np.ndarray
    phi: float
    theta: Optional[Dict[str, float]] = None
    grad: Optional[np.ndarray] = None


class PCN:
    """Preconditioned Crank-Nicolson on u with a Gaussian prior N(0, C).

    ``prior_sample(rng)`` draws from N(0, C); ``potential(u)`` is Phi.
    """

    blocks = ("u",)

    def __init__(self, potential, prior_sample, beta):
        if not 0 < beta <= 1:
            raise DomainError("beta must lie in (0, 1]")
        self.potential = potential
        self.prior_sample = prior_sample
        self.beta = beta
        self._rho = math.sqrt(1.0 - beta * beta)

    def init(self, u, theta=None):
        u = np.asarray(u, dtype=float)
        return ChainState(u, float(self.potential(u)))

    def propose(self, x, rng):
        return self._rho * x + self.beta * self.prior_sample(rng)

    def step(self, state, rng):
        prop = self.propose(state.xi, rng)
        phi = float(self.potential(prop))
        ok, prob = _accept(state.phi - phi, rng)
        if ok:
            state = ChainState(prop, phi, state.theta)
        return state, (bool(ok),), (prob,)


class WPCN(PCN):
    """pCN on white-noise coordinates; ``potential`` is Psi = Phi o T."""

    blocks = ("xi",)

    def __init__(self, potential, beta):
        super().__init__(potential, None, beta)

    def propose(self, x, rng):
        return self._rho * x + self.beta * rng.standard_normal(x.shape)


class WMALA:
    """Whitened infinity-MALA with step h in (0, 4], beta = 4 sqrt(h) / (4 + h).

    ``potential_and_grad(xi)`` returns (Psi(xi), D Psi(xi)).  Proposals with a
    non-finite gradient are rejected and counted in ``nonfinite``.
    """

    blocks = ("xi",)

    def __init__(self, potential_and_grad, h):
        if not 0 < h <= 4:
            raise DomainError("h must lie in (0, 4]")
        self.potential_and_grad = potential_and_grad
        self.h = h
        self.beta = 4.0 * math.sqrt(h) / (4.0 + h)
        self._rho = math.sqrt(max(1.0 - self.beta ** 2, 0.0))
        self.nonfinite = 0

    @classmethod
    def from_beta(cls, potential_and_grad, beta):
        """Choose h in (0, 4] with 4 sqrt(h) / (4 + h) = beta."""
        if not 0 < beta <= 1:
            raise DomainError("beta must lie in (0, 1]")
        # sqrt(h) is the smaller root of beta s^2 - 4 s + 4 beta = 0, in cancellation-free form
        s = 2.0 * beta / (1.0 + math.sqrt(max(1.0 - beta * beta, 0.0)))
        return cls(potential_and_grad, min(s * s, 4.0))

    def init(self, xi, theta=None):
        xi = np.asarray(xi, dtype=float)
        phi, g = self.potential_and_grad(xi)
        return ChainState(xi, float(phi), grad=np.asarray(g, dtype=float))

    def _I(self, phi, g, x, y):
        """I(x, y) = Psi(x) + h/8 |D Psi(x)|^2 + sqrt(h)/2 <D Psi(x), (y - rho x) / beta>."""
        return (phi + self.h / 8.0 * float(np.dot(g, g))
                + 0.5 * math.sqrt(self.h) * float(np.dot(g, (y - self._rho * x) / self.beta)))

    def step(self, state, rng):
        x, g = state.xi, state.grad
        zeta = rng.standard_normal(x.shape)
        y = self._rho * x + self.beta * (zeta - 0.5 * math.sqrt(self.h) * g)
        phi_y, g_y = self.potential_and_grad(y)
        g_y = np.asarray(g_y, dtype=float)
        if not (np.isfinite(phi_y) and np.all(np.isfinite(g_y))):
            self.nonfinite += 1
            rng.random()
            return state, (False,), (0.0,)
        log_ratio = self._I(state.phi, g, x, y) - self._I(float(phi_y), g_y, y, x)
        ok, prob = _accept(log_ratio, rng)
        if ok:
            state = ChainState(y, float(phi_y), state.theta, g_y)
        return state, (bool(ok),), (prob,)


class RWM:
    """Random-walk Metropolis x -> x + beta zeta on an explicit coordinate space.

    ``variant='white'`` draws zeta ~ N(0, I); ``variant='prior'`` draws zeta
    from ``prior_sample``.  Both proposals are symmetric, and since neither
    preserves the prior the target is exp(-Phi(x) + log_prior(x)).
    """

    blocks = ("x",)

    def __init__(self, potential, log_prior, beta, variant="white", prior_sample=None):
        if variant not in ("white", "prior"):
            raise DomainError("variant must be 'white' or 'prior'")
        if variant == "prior" and prior_sample is None:
            raise DomainError("prior variant needs a prior sampler")
        if not beta > 0:
            raise DomainError("beta must be positive")
        self.potential = potential
        self.log_prior = log_prior
        self.beta = beta
        self.variant = variant
        self.prior_sample = prior_sample

    def init(self, x, theta=None):
        x = np.asarray(x, dtype=float)
        return ChainState(x, float(self.potential(x)) - float(self.log_prior(x)))

    def step(self, state, rng):
        x = state.xi
        if self.variant == "white":
            zeta = rng.standard_normal(x.shape)
        else:
            zeta = self.prior_sample(rng)
        y = x + self.beta * zeta
        lp = float(self.log_prior(y))
        # phi holds the full negative log target
        neg = float(self.potential(y)) - lp if np.isfinite(lp) else np.inf
        ok, prob = _accept(state.phi - neg, rng)
        if ok:
            state = ChainState(y, neg, state.theta)
        return state, (bool(ok),), (prob,)


class NonCentredGibbs:
    """Non-centred pCN within Gibbs on (xi, theta).

    One wpCN move on xi given theta, then one Metropolis-Hastings move on theta
    given the updated xi.  ``potential(xi, theta)`` is Phi(T(xi, theta); y).
    """

    blocks = ("xi", "theta")

    def __init__(self, potential, hyper: HyperPrior, beta):
        if not 0 < beta <= 1:
            raise DomainError("beta must lie in (0, 1]")
        self.potential = potential
        self.hyper = hyper
        self.beta = beta
        self._rho = math.sqrt(1.0 - beta * beta)

    def init(self, xi, theta=None):
        theta = self.hyper.initial() if theta is None else dict(theta)
        if not self.hyper.in_support(theta):
            raise DomainError("initial hyperparameters outside prior support")
        xi = np.asarray(xi, dtype=float)
        return ChainState(xi, float(self.potential(xi, theta)), theta)

    def step(self, state, rng):
        xi, theta, phi = state.xi, state.theta, state.phi
        prop = self._rho * xi + self.beta * rng.standard_normal(xi.shape)
        phi_prop = float(self.potential(prop, theta))
        ok_xi, p_xi = _accept(phi - phi_prop, rng)
        if ok_xi:
            xi, phi = prop, phi_prop

        theta_prop, logq = self.hyper.propose(theta, rng)
        if self.hyper.in_support(theta_prop):
            phi_t = float(self.potential(xi, theta_prop))
            # uniform priors: pi_0 ratio is one inside the support
            ok_t, p_t = _accept(phi - phi_t + logq, rng)
        else:
            rng.random()
            ok_t, p_t = False, 0.0
        if ok_t:
            theta, phi = theta_prop, phi_t
        return ChainState(xi, phi, theta), (bool(ok_xi), bool(ok_t)), (p_xi, p_t)


# ---------------------------------------------------------------------------
# chain driver
# ---------------------------------------------------------------------------


@dataclass
class ChainRecord:
    """Output of :func:`run_chain`.

    ``accepted``/``accept_prob`` have one row per step and one column per block.
    ``samples``, ``theta`` and ``summaries`` hold the initial state followed by
    every kept (post burn-in, thinned) state.
    """

    blocks: Sequence[str]
    accepted: np.ndarray
    accept_prob: np.ndarray
    steps: np.ndarray
    samples: Optional[List[np.ndarray]] = None
    theta: List[Dict[str, float]] = field(default_factory=list)
    summaries: Dict[str, List[float]] = field(default_factory=dict)
    final_state: Optional[ChainState] = None

    def acceptance_rate(self, block=0):
        return float(np.mean(self.accepted[:, block]))

    def mean_accept_prob(self, block=0):
        return float(np.mean(self.accept_prob[:, block]))

    def __len__(self):
        return len(self.steps)

    def to_csv(self, path, header_comment=None):
        """Columns: step, accept_<block>..., theta entries..., summaries."""
        theta_names = list(self.theta[0].keys()) if self.theta and self.theta[0] else []
        summ = list(self.summaries.keys())
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh)
            w.writerow(["step"] + [f"accept_{b}" for b in self.blocks] + theta_names + summ)
            for r, step in enumerate(self.steps):
                if step == 0:
                    flags = [""] * len(self.blocks)
                else:
                    flags = [int(f) for f in self.accepted[step - 1]]
                th = [repr(float(self.theta[r][n])) for n in theta_names]
                sm = [repr(float(self.summaries[s][r])) for s in summ]
                w.writerow([int(step)] + flags + th + sm)


def run_chain(kernel, initial, n_steps, rng, thin=1, burn_in=0, store_samples=True,
              summaries: Optional[Dict[str, Callable[[ChainState], float]]] = None,
              callback: Optional[Callable[[int, ChainState], None]] = None):
    """Run ``n_steps`` kernel steps from ``initial`` (a ChainState or raw xi).

    ``rng`` is a Generator or an integer seed.  States are kept at step 0 and
    at every step k > burn_in with (k - burn_in) % thin == 0.  ``callback`` is
    called after every step, kept or not.
    """
    if n_steps < 1:
        raise DomainError("need at least one step")
    if thin < 1 or burn_in < 0:
        raise DomainError("thin must be >= 1 and burn_in >= 0")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    state = initial if isinstance(initial, ChainState) else kernel.init(initial)
    if not np.isfinite(state.phi):
        raise NumericError("potential is not finite at the initial state")
    summaries = summaries or {}
    nb = len(kernel.blocks)
    accepted = np.zeros((n_steps, nb), dtype=bool)
    probs = np.zeros((n_steps, nb))
    kept_steps = [0]
    samples = [state.xi.copy()] if store_samples else None
    thetas = [dict(state.theta) if state.theta else {}]
    summ = {k: [float(f(state))] for k, f in summaries.items()}
    for k in range(1, n_steps + 1):
        state, ok, pr = kernel.step(state, rng)
        accepted[k - 1] = ok
        probs[k - 1] = pr
        if callback is not None:
            callback(k, state)
        if k > burn_in and (k - burn_in) % thin == 0:
            kept_steps.append(k)
            if store_samples:
                samples.append(state.xi.copy())
            thetas.append(dict(state.theta) if state.theta else {})
            for name, f in summaries.items():
                summ[name].append(float(f(state)))
    return ChainRecord(tuple(kernel.blocks), accepted, probs, np.array(kept_steps),
                       samples, thetas, summ, state)

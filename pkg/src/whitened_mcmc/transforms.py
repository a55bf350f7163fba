"""White-noise representations of series and level-set priors.

A prior is represented by a map ``T`` from i.i.d. standard normal
coordinates ``xi`` to the latent field.  For series priors

    T(xi) = m + sum_j rho_j * Lambda_j(xi_j) * phi_j

where ``Lambda_j`` pushes N(0, 1) forward to the coefficient law.  The
coefficient transforms live here, together with the cosine bases used on
rectangles and the ordered / vector level-set maps.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import special

from .errors import DomainError, NumericError, UnsupportedGradientError

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# white noise container
# ---------------------------------------------------------------------------


@dataclass
class WhiteNoiseVector:
    """Finite truncation of a white-noise draw.

    ``paired`` holds the second independent stream needed by the stable
    transform and is ``None`` for every other coefficient law.
    """

    coords: np.ndarray
    paired: Optional[np.ndarray] = None
    seed: Optional[int] = None

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=float)
        if self.coords.size < 1:
            raise DomainError("white noise vector must have at least one entry")
        if not np.all(np.isfinite(self.coords)):
            raise DomainError("white noise coordinates must be finite")
        if self.paired is not None:
            self.paired = np.asarray(self.paired, dtype=float)
            if self.paired.shape != self.coords.shape:
                raise DomainError("paired stream must match coords in shape")
            if not np.all(np.isfinite(self.paired)):
                raise DomainError("paired coordinates must be finite")

    @classmethod
    def draw(cls, n, seed, paired=False):
        rng = np.random.default_rng(seed)
        coords = rng.standard_normal(n)
        second = rng.standard_normal(n) if paired else None
        return cls(coords, second, seed)

    def __len__(self):
        return self.coords.shape[-1]


def _as_coords(xi):
    if isinstance(xi, WhiteNoiseVector):
        return xi.coords, xi.paired
    return np.asarray(xi, dtype=float), None


def _check_finite(x, name="xi"):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DomainError(f"{name} must be finite")
    return x


# ---------------------------------------------------------------------------
# scalar coefficient transforms
# ---------------------------------------------------------------------------


def lambda_uniform(xi):
    """Map N(0,1) to U(-1,1) via 2F(xi) - 1."""
    xi = _check_finite(xi)
    out = special.erf(xi / math.sqrt(2.0))
    return out if out.ndim else float(out)


def lambda_uniform_derivative(xi):
    xi = _check_finite(xi)
    out = 2.0 * np.exp(-0.5 * xi * xi - LOG_SQRT_2PI)
    return out if out.ndim else float(out)


def _incgamma_seed(p, a):
    """Starting point for the inverse of the regularised lower gamma."""
    p = np.asarray(p, dtype=float)
    z = np.empty_like(p)
    if a > 1.0:
        # Wilson-Hilferty
        x = special.ndtri(np.clip(p, 1e-300, 1 - 1e-16))
        t = 1.0 / (9.0 * a)
        z = a * (1.0 - t + x * math.sqrt(t)) ** 3
        small = z <= 0.0
        z = np.where(small, (p * math.gamma(a + 1.0)) ** (1.0 / a), z)
    else:
        t = 1.0 - a * (0.253 + 0.12 * a)
        low = p < t
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(low, (p / t) ** (1.0 / a), 1.0 - np.log1p(-(p - t) / (1.0 - t)))
    return np.maximum(z, 1e-300)


def inverse_lower_incomplete_gamma(p, a, *, complement=None, tol=1e-12, max_iter=200):
    """Solve gamma_a(z) = p for z, where gamma_a is the regularised lower gamma.

    ``complement`` may carry 1 - p computed to full relative precision; it is
    used in the upper tail where p itself has lost its significant digits.
    Newton iteration with a bisection safeguard; raises NumericError if the
    iteration cap is hit.
    """
    if not a > 0:
        raise DomainError("shape parameter a must be positive")
    p = np.asarray(p, dtype=float)
    scalar = p.ndim == 0
    p = np.atleast_1d(p)
    if np.any(~np.isfinite(p)) or np.any(p < 0.0) or np.any(p >= 1.0):
        raise DomainError("p must lie in [0, 1)")
    if complement is None:
        pc = 1.0 - p
    else:
        pc = np.atleast_1d(np.asarray(complement, dtype=float))
        pc = np.broadcast_to(pc, p.shape)
    upper = p > 0.5
    z = _incgamma_seed(p, a)
    # deep upper tail: seed from the complement, z ~ -log Q + (a-1) log z - log Gamma(a)
    deep = upper & (pc < 1e-2) & (pc > 0.0)
    if np.any(deep):
        lq = -np.log(pc[deep])
        z[deep] = np.maximum(lq + (a - 1.0) * np.log(lq) - special.gammaln(a), 1e-3)
    lo = np.zeros_like(p)
    hi = np.full_like(p, np.inf)
    log_gamma_a = special.gammaln(a)
    zero = p == 0.0
    active = ~zero
    for _ in range(max_iter):
        if not np.any(active):
            break
        za = z[active]
        up = upper[active]
        # residual increasing in z for both branches; the upper one is taken in
        # log space so Newton keeps quadratic convergence far into the tail
        qa = special.gammaincc(a, za)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            r = np.where(up, np.log(pc[active]) - np.log(qa), special.gammainc(a, za) - p[active])
        # r > 0 means z too large
        hi[active] = np.where(r > 0, np.minimum(hi[active], za), hi[active])
        lo[active] = np.where(r < 0, np.maximum(lo[active], za), lo[active])
        logdens = (a - 1.0) * np.log(za) - za - log_gamma_a
        dens = np.exp(logdens)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            step = np.where(up, r * np.exp(np.log(qa) - logdens), r / dens)
            znew = za - step
        bad = ~np.isfinite(znew) | (znew <= lo[active]) | (znew >= hi[active])
        bis = np.where(np.isfinite(hi[active]), 0.5 * (lo[active] + hi[active]), 2.0 * za)
        znew = np.where(bad, bis, znew)
        width = hi[active] - lo[active]
        done = ((np.abs(znew - za) <= tol * np.maximum(za, 1e-300) * 1e-3) | (r == 0.0)
                | (width <= 4.0 * np.finfo(float).eps * np.maximum(za, 1e-300)))
        z[active] = znew
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    else:
        if np.any(active):
            raise NumericError("inverse incomplete gamma did not converge")
    z[zero] = 0.0
    return float(z[0]) if scalar else z


def _besov_z(absxi, a):
    """gamma_a^{-1}(2F(|xi|) - 1), computed from the accurate tail 2F(-|xi|)."""
    if a == 1.0:
        # gamma_1(z) = 1 - exp(-z); erfc keeps full relative precision until it underflows
        tail = special.erfc(absxi / math.sqrt(2.0))
        far = tail < 1e-300
        if np.any(far):
            tail = np.where(far, 1.0, tail)
            return np.where(far, -(math.log(2.0) + special.log_ndtr(-absxi)), -np.log(tail))
        return -np.log(tail)
    tail = 2.0 * special.ndtr(-absxi)
    far = tail < 1e-300
    p = special.erf(absxi / math.sqrt(2.0))
    p = np.minimum(p, np.nextafter(1.0, 0.0))
    z = np.empty_like(absxi, dtype=float)
    near = ~far
    if np.any(near):
        z[near] = inverse_lower_incomplete_gamma(p[near], a, complement=tail[near])
    if np.any(far):
        z[far] = _inverse_log_upper_gamma(math.log(2.0) + special.log_ndtr(-absxi[far]), a)
    return z


def _log_upper_gamma(a, z):
    """log Q(a, z) for large z via the asymptotic series of Gamma(a, z)."""
    term = np.ones_like(z)
    total = np.ones_like(z)
    for k in range(1, 30):
        term = term * (a - k) / z
        total = total + term
        if np.all(np.abs(term) < 1e-17 * np.abs(total)):
            break
    return (a - 1.0) * np.log(z) - z - special.gammaln(a) + np.log(total)


def _inverse_log_upper_gamma(log_q, a, max_iter=100):
    """Solve log Q(a, z) = log_q when Q itself underflows (z of several hundred)."""
    z = -np.asarray(log_q, dtype=float)
    for _ in range(max_iter):
        f = _log_upper_gamma(a, z) - log_q
        # d/dz log Q = -z^{a-1} e^{-z} / (Gamma(a) Q)
        slope = -np.exp((a - 1.0) * np.log(z) - z - special.gammaln(a) - _log_upper_gamma(a, z))
        step = f / slope
        z = z - step
        if np.all(np.abs(step) <= 4.0 * np.finfo(float).eps * z):
            return z
    raise NumericError("inverse incomplete gamma did not converge")


def lambda_besov(xi, q, return_flag=False):
    """Map N(0,1) to the law with density proportional to exp(-|x|^q / 2).

    Returns ``(value, derivative)``.  The derivative has the closed form
    2^{1+1/q} Gamma(1+1/q) phi(xi) exp(z) with z = gamma_{1/q}^{-1}(2F(|xi|)-1),
    so it is finite at xi = 0.  For q < 2 the transform is not twice
    differentiable there; with ``return_flag`` a boolean mask marking those
    points is returned as a third element (the derivative reported there is
    the common one-sided limit).
    """
    if not q >= 1.0:
        raise DomainError("Besov exponent q must satisfy q >= 1")
    xi = _check_finite(xi)
    scalar = xi.ndim == 0
    xi = np.atleast_1d(xi)
    a = 1.0 / q
    absxi = np.abs(xi)
    z = np.asarray(_besov_z(absxi, a), dtype=float)
    value = np.sign(xi) * 2.0 ** a * z ** a + 0.0  # no negative zero
    logd = (1.0 + a) * math.log(2.0) + special.gammaln(1.0 + a) - 0.5 * xi * xi - LOG_SQRT_2PI + z
    deriv = np.exp(logd)
    flag = (xi == 0.0) & (q < 2.0)
    if scalar:
        value, deriv, flag = float(value[0]), float(deriv[0]), bool(flag[0])
    if return_flag:
        return value, deriv, flag
    return value, deriv


def besov_cdf(x, q):
    """CDF of the density proportional to exp(-|x|^q / 2)."""
    x = np.asarray(x, dtype=float)
    return 0.5 + 0.5 * np.sign(x) * special.gammainc(1.0 / q, 0.5 * np.abs(x) ** q)


def besov_weights(n, q, kappa, s, d):
    """rho_j = kappa^{-1/q} j^{-(s/d + 1/2 - 1/q)} for j = 1..n."""
    j = np.arange(1, n + 1, dtype=float)
    return kappa ** (-1.0 / q) * j ** (-(s / d + 0.5 - 1.0 / q))


def _stable_params(alpha, skew, scale):
    if not (0.0 < alpha <= 2.0):
        raise DomainError("stability index alpha must lie in (0, 2]")
    skew = np.asarray(skew, dtype=float)
    scale = np.asarray(scale, dtype=float)
    if np.any(np.abs(skew) > 1.0):
        raise DomainError("skewness must lie in [-1, 1]")
    if np.any(scale <= 0.0):
        raise DomainError("scale must be positive")
    return skew, scale


def lambda_stable(xi, xi2, alpha, skew=0.0, scale=1.0, loc=0.0):
    """Chambers-Mallows-Stuck transform of two independent N(0,1) streams.

    U = pi (F(xi) - 1/2) is uniform on (-pi/2, pi/2) and W = -log(1 - F(xi2))
    is Exp(1); the output is S(alpha, skew, scale, loc).
    """
    skew, scale = _stable_params(alpha, skew, scale)
    xi = _check_finite(xi)
    xi2 = _check_finite(xi2, "xi2")
    loc = np.asarray(loc, dtype=float)
    U = math.pi * (special.ndtr(xi) - 0.5)
    # cos(U) = sin(pi * F(-|xi|)), accurate as |U| -> pi/2
    cosU = np.sin(math.pi * special.ndtr(-np.abs(xi)))
    W = -special.log_ndtr(-xi2)
    if alpha != 1.0:
        tau = -skew * math.tan(math.pi * alpha / 2.0)
        theta = np.arctan(-tau) / alpha
        first = np.sin(alpha * (U + theta)) / cosU ** (1.0 / alpha)
        second = (np.cos(U - alpha * (U + theta)) / W) ** ((1.0 - alpha) / alpha)
        out = loc + scale * (1.0 + tau * tau) ** (1.0 / (2.0 * alpha)) * first * second
    else:
        tau = (2.0 / math.pi) * skew * scale * np.log(scale)
        theta = math.pi / 2.0
        tanU = np.sin(U) / cosU
        with np.errstate(divide="ignore"):
            logterm = np.log(math.pi * W * cosU / (math.pi + 2.0 * skew * U))
        body = (math.pi / 2.0 + skew * U) * tanU - np.where(skew == 0.0, 0.0, skew * logterm)
        out = loc + tau + scale / theta * body
    return out if np.ndim(out) else float(out)


# ---------------------------------------------------------------------------
# coefficient laws
# ---------------------------------------------------------------------------


class CoefficientLaw:
    """Law of the series coefficients zeta_j, expressed through Lambda."""

    differentiable = True
    paired = False

    def transform(self, xi, xi2=None):
        raise NotImplementedError

    def derivative(self, xi):
        raise NotImplementedError

    def log_density(self, zeta):
        """Unnormalised log density of the coefficients (summed)."""
        raise NotImplementedError

    def sample(self, rng, n):
        xi = rng.standard_normal(n)
        xi2 = rng.standard_normal(n) if self.paired else None
        return self.transform(xi, xi2)


class GaussianLaw(CoefficientLaw):
    def transform(self, xi, xi2=None):
        return np.asarray(xi, dtype=float)

    def derivative(self, xi):
        return np.ones_like(np.asarray(xi, dtype=float))

    def log_density(self, zeta):
        return -0.5 * float(np.dot(zeta, zeta))


class UniformLaw(CoefficientLaw):
    def transform(self, xi, xi2=None):
        return lambda_uniform(xi)

    def derivative(self, xi):
        return lambda_uniform_derivative(xi)

    def log_density(self, zeta):
        return 0.0 if np.all(np.abs(zeta) < 1.0) else -np.inf


@dataclass
class BesovLaw(CoefficientLaw):
    q: float = 1.0
    kappa: float = 1.0
    s: float = 1.0

    def __post_init__(self):
        if not self.q >= 1.0:
            raise DomainError("Besov exponent q must satisfy q >= 1")
        if not (self.kappa > 0 and self.s > 0):
            raise DomainError("Besov kappa and s must be positive")

    def transform(self, xi, xi2=None):
        return lambda_besov(xi, self.q)[0]

    def derivative(self, xi):
        return lambda_besov(xi, self.q)[1]

    def log_density(self, zeta):
        return -0.5 * float(np.sum(np.abs(zeta) ** self.q))

    def weights(self, n, d):
        return besov_weights(n, self.q, self.kappa, self.s, d)


@dataclass
class StableLaw(CoefficientLaw):
    alpha: float = 1.0
    skew: Union[float, np.ndarray] = 0.0
    scale: Union[float, np.ndarray] = 1.0
    loc: Union[float, np.ndarray] = 0.0

    differentiable = False
    paired = True

    def __post_init__(self):
        _stable_params(self.alpha, self.skew, self.scale)

    def transform(self, xi, xi2=None):
        if xi2 is None:
            raise DomainError("stable transform needs the paired white-noise stream")
        return lambda_stable(xi, xi2, self.alpha, self.skew, self.scale, self.loc)

    def derivative(self, xi):
        raise UnsupportedGradientError("gradient not provided for the stable transform")


# ---------------------------------------------------------------------------
# bases and grids
# ---------------------------------------------------------------------------


@dataclass
class EvaluationGrid:
    """Points at which fields are evaluated, plus quadrature weights.

    With unit weights the inner product is the plain sum over points, which
    is the right pairing when the potential depends on point values.
    """

    points: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        self.points = pts
        if self.weights is None:
            self.weights = np.ones(pts.shape[0])
        else:
            self.weights = np.asarray(self.weights, dtype=float)

    @property
    def dim(self):
        return self.points.shape[1]

    def __len__(self):
        return self.points.shape[0]


def enumerate_modes(dim, n, include_constant=False):
    """First n multi-indices k >= 0, sorted by |k|^2 then lexicographically."""
    if n <= 0:
        raise DomainError("number of modes must be positive")
    if dim == 1:
        start = 0 if include_constant else 1
        return np.arange(start, start + n)[:, None]
    # grow a cube until it holds enough shells to be complete up to the n-th mode
    r = int(math.ceil(n ** (1.0 / dim))) + 1
    while True:
        ks = np.array(list(itertools.product(range(r + 1), repeat=dim)))
        if not include_constant:
            ks = ks[np.any(ks > 0, axis=1)]
        norms = np.sum(ks * ks, axis=1)
        order = np.lexsort(tuple(ks[:, i] for i in reversed(range(dim))) + (norms,))
        ks, norms = ks[order], norms[order]
        if len(ks) >= n and norms[n - 1] <= r * r:
            return ks[:n]
        r *= 2


@dataclass
class CosineBasis:
    """Tensor cosine basis on a rectangle, enumerated by |k|^2.

    ``orthonormal=True`` scales each mode to unit L^2 norm on the rectangle
    (so 1 for k=0 and sqrt(2) per non-zero index on the unit interval).
    ``orthonormal=False`` uses the plain factor 2^{d/2} for every mode,
    i.e. 2 cos(k1 pi x) cos(k2 pi y) in two dimensions.
    """

    dim: int
    n_modes: int
    include_constant: bool = False
    orthonormal: bool = True
    lower: Optional[Sequence[float]] = None
    upper: Optional[Sequence[float]] = None
    modes: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.n_modes <= 0:
            raise DomainError("number of modes must be positive")
        self.lower = np.zeros(self.dim) if self.lower is None else np.asarray(self.lower, float)
        self.upper = np.ones(self.dim) if self.upper is None else np.asarray(self.upper, float)
        self.modes = enumerate_modes(self.dim, self.n_modes, self.include_constant)

    @property
    def lengths(self):
        return self.upper - self.lower

    def mode_scale(self):
        if self.orthonormal:
            nz = (self.modes > 0).sum(axis=1)
            return np.sqrt(2.0 ** nz / np.prod(self.lengths))
        return np.full(self.n_modes, 2.0 ** (self.dim / 2.0))

    def axis_matrix(self, coords, axis, kmax):
        """cos(k pi (x - a) / L) for k = 0..kmax along one axis."""
        x = (np.asarray(coords, float) - self.lower[axis]) / self.lengths[axis]
        return np.cos(np.pi * np.outer(x, np.arange(kmax + 1)))

    def evaluate(self, points):
        """Matrix with entry (i, j) = phi_j(points[i])."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.shape[1] != self.dim:
            raise DomainError("points do not match basis dimension")
        tol = 1e-12
        if np.any(pts < self.lower - tol) or np.any(pts > self.upper + tol):
            raise DomainError("evaluation points lie outside the basis domain")
        out = np.ones((pts.shape[0], self.n_modes))
        for ax in range(self.dim):
            x = (pts[:, ax] - self.lower[ax]) / self.lengths[ax]
            out *= np.cos(np.pi * np.outer(x, self.modes[:, ax]))
        return out * self.mode_scale()

    def synthesize_tensor(self, coeffs, axes):
        """Evaluate sum_j c_j phi_j on a tensor grid given by 1-D axis coordinates.

        Uses separable matrix products instead of the dense basis matrix.
        Only implemented for dim in (1, 2).
        """
        coeffs = np.asarray(coeffs, dtype=float) * self.mode_scale()
        kmax = self.modes.max(axis=0)
        if self.dim == 1:
            return self.axis_matrix(axes[0], 0, kmax[0])[:, self.modes[:, 0]] @ coeffs
        if self.dim != 2:
            raise DomainError("tensor synthesis supports one or two dimensions")
        A = np.zeros((kmax[0] + 1, kmax[1] + 1))
        np.add.at(A, (self.modes[:, 0], self.modes[:, 1]), coeffs)
        Cx = self.axis_matrix(axes[0], 0, kmax[0])
        Cy = self.axis_matrix(axes[1], 1, kmax[1])
        return Cx @ A @ Cy.T

    def inner_products(self, values, grid: EvaluationGrid):
        """<values, phi_j> using the grid's quadrature weights."""
        return self.evaluate(grid.points).T @ (grid.weights * values)


# ---------------------------------------------------------------------------
# series prior and its transform
# ---------------------------------------------------------------------------


MeanSpec = Union[float, Callable[[np.ndarray], np.ndarray]]


@dataclass
class SeriesPrior:
    weights: np.ndarray
    basis: CosineBasis
    law: CoefficientLaw
    mean: MeanSpec = 0.0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (self.basis.n_modes,):
            raise DomainError("weights must have one entry per basis function")
        if not np.all(np.isfinite(self.weights)) or np.any(self.weights < 0):
            raise DomainError("weights must be finite and non-negative")
        if isinstance(self.law, StableLaw) and not np.all(self.weights == 1.0):
            raise DomainError("stable series priors use unit weights")

    def __len__(self):
        return self.basis.n_modes

    def mean_values(self, points):
        if callable(self.mean):
            return np.asarray(self.mean(points), dtype=float)
        return np.full(points.shape[0], float(self.mean))

    def coefficients(self, xi, xi2=None):
        """rho_j * Lambda_j(xi_j)."""
        return self.weights * self.law.transform(xi, xi2)


class SeriesTransform:
    """T(xi) for a series prior bound to an evaluation grid.

    The basis matrix is built once, so repeated evaluation inside a chain costs
    one matrix-vector product.
    """

    def __init__(self, prior: SeriesPrior, grid: EvaluationGrid):
        self.prior = prior
        self.grid = grid
        self.matrix = prior.basis.evaluate(grid.points)
        self.mean = prior.mean_values(grid.points)

    def __len__(self):
        return len(self.prior)

    def _check(self, xi):
        if xi.shape[-1] != len(self.prior):
            raise DomainError(
                f"white noise truncation {xi.shape[-1]} does not match {len(self.prior)} basis functions"
            )

    def __call__(self, xi, xi2=None):
        coords, paired = _as_coords(xi)
        xi2 = paired if xi2 is None else xi2
        self._check(coords)
        return self.mean + self.matrix @ self.prior.coefficients(coords, xi2)

    def jvp(self, xi, h):
        """T'(xi) h."""
        coords, _ = _as_coords(xi)
        return self.matrix @ (self.prior.weights * self._derivative(coords) * h)

    def vjp(self, xi, w):
        """T'(xi)^* w, with the adjoint taken in the grid's weighted pairing."""
        coords, _ = _as_coords(xi)
        self._check(coords)
        return self.prior.weights * self._derivative(coords) * (self.matrix.T @ (self.grid.weights * w))

    def _derivative(self, coords):
        if not self.prior.law.differentiable:
            raise UnsupportedGradientError("coefficient law has no usable derivative")
        return self.prior.law.derivative(coords)


def series_transform(xi, prior: SeriesPrior, grid: EvaluationGrid):
    """Field values of T(xi) on ``grid``."""
    return SeriesTransform(prior, grid)(xi)


def series_transform_grad(xi, prior: SeriesPrior, dphi, grid: EvaluationGrid):
    """D Psi(xi)_j = rho_j Lambda_j'(xi_j) <D Phi(T(xi)), phi_j>."""
    return SeriesTransform(prior, grid).vjp(xi, np.asarray(dphi, dtype=float))


# ---------------------------------------------------------------------------
# level-set maps
# ---------------------------------------------------------------------------


@dataclass
class LevelSetSpec:
    classes: np.ndarray
    thresholds: np.ndarray

    def __post_init__(self):
        self.classes = np.asarray(self.classes, dtype=float)
        self.thresholds = np.asarray(self.thresholds, dtype=float)
        k = self.classes.shape[0]
        if k < 2:
            raise DomainError("level-set map needs at least two classes")
        if self.thresholds.shape != (k - 1,):
            raise DomainError("need exactly k - 1 thresholds")
        if np.any(np.diff(self.thresholds) <= 0):
            raise DomainError("thresholds must be strictly increasing")


def levelset_index(v, spec: LevelSetSpec):
    """Class index i (0-based) with c_{i-1} < v <= c_i."""
    return np.searchsorted(spec.thresholds, np.asarray(v, dtype=float), side="left")


def levelset_map(v, spec: LevelSetSpec):
    return spec.classes[levelset_index(v, spec)]


def vector_levelset_map(v):
    """One-hot of the argmax over k stacked fields; ties go to the lowest index.

    ``v`` is a sequence of k equally shaped fields (or an array with the class
    axis first); the one-hot axis is appended last in the result.
    """
    if isinstance(v, (list, tuple)):
        shapes = {np.shape(f) for f in v}
        if len(shapes) != 1:
            raise DomainError("all fields must live on the same grid")
    v = np.asarray(v, dtype=float)
    k = v.shape[0]
    if k < 2:
        raise DomainError("vector level-set map needs k >= 2 fields")
    idx = np.argmax(v, axis=0)
    return np.eye(k)[idx]

"""Stationary initial data and its spatial Ornstein-Uhlenbeck limit.

On the full line the stationary height is a Markov chain run leftwards in
``x``: from ``s(x) = s`` it moves to ``s + 1`` with probability
``q^s / (alpha + q^s)`` and to ``s - 1`` otherwise.  Heights on even sites are
even and heights on odd sites are odd.  The one-point marginals are

    P(s = 2n)     = alpha^{-2n} q^{n(2n-1)} (1 + alpha^{-1} q^{2n})   / (-1/alpha, -q alpha, q; q)_inf
    P(s = 2n + 1) = alpha^{-2n} q^{n(2n+1)} (1 + alpha^{-1} q^{2n+1}) / (-q/alpha, -alpha, q; q)_inf

The odd-site weight carries ``alpha^{-2n}``; with a constant ``alpha^{-1}``
instead, the odd marginal is neither normalized by the stated product nor
consistent with the chain unless ``alpha = 1``.
"""
from __future__ import annotations

import enum
import io
from dataclasses import dataclass

import numba
import numpy as np
from scipy.special import expit, logsumexp

from .lattice import Domain, HeightFunction, LineWindow
from .model import ModelParams


class NonConvergent(ValueError):
    pass


class Parity(str, enum.Enum):
    EVEN = "even"
    ODD = "odd"


def _n_terms(a: float, q: float, tol: float) -> int:
    # tail of sum log(1 - a q^k) over k >= K is below |a| q^K / ((1-q)(1-|a|q^K))
    if a == 0:
        return 0
    aq = abs(a)
    k = np.log(tol * (1 - abs(q)) / (2 * aq)) / np.log(abs(q))
    return max(int(np.ceil(k)), 0) + 2


def log_q_pochhammer(a: float, q: float, tol: float = 1e-15) -> tuple[float, int]:
    """``(log|(a; q)_inf|, sign)`` without overflow."""
    if not abs(q) < 1:
        raise NonConvergent(f"q-Pochhammer needs |q| < 1, got q={q}")
    k = np.arange(_n_terms(a, q, tol), dtype=float)
    f = 1.0 - a * q**k
    if np.any(f == 0):
        return -np.inf, 0
    sign = -1 if np.count_nonzero(f < 0) % 2 else 1
    return float(np.sum(np.log(np.abs(f)))), sign


def q_pochhammer(a: float, q: float, tol: float = 1e-15) -> float:
    """``prod_{k>=0} (1 - a q^k)``, stopped once the tail correction is below ``tol``."""
    logv, sign = log_q_pochhammer(a, q, tol)
    return sign * float(np.exp(logv))


def log_normalizer(params: ModelParams, parity: Parity) -> float:
    """Log of the product normalizing the one-point marginal of that parity."""
    q, a = params.q, params.alpha
    if Parity(parity) is Parity.EVEN:
        args = (-1 / a, -q * a, q)
    else:
        args = (-q / a, -a, q)
    return sum(log_q_pochhammer(x, q)[0] for x in args)


def log_weights(params: ModelParams, parity: Parity, n: np.ndarray) -> np.ndarray:
    """Unnormalized log-probabilities of ``s = 2n`` (even) or ``s = 2n + 1`` (odd)."""
    n = np.asarray(n, dtype=float)
    lq = -params.eps
    la = np.log(params.alpha)
    r = 0 if Parity(parity) is Parity.EVEN else 1
    return -2 * n * la + n * (2 * n - 1 + 2 * r) * lq + np.logaddexp(0.0, -la + (2 * n + r) * lq)


@dataclass
class MarginalPMF:
    parity: Parity
    support: np.ndarray  # n values
    probs: np.ndarray
    truncation_error: float
    normalizer_mismatch: float = 0.0

    @property
    def heights(self) -> np.ndarray:
        return 2 * self.support + (0 if self.parity is Parity.EVEN else 1)

    def moment(self, k: int, scale: float = 1.0, center: float = 0.0) -> float:
        return float(np.sum(self.probs * (scale * (self.heights - center)) ** k))

    def mean(self) -> float:
        return float(np.sum(self.probs * self.heights))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("n,prob\n")
        for n, p in zip(self.support, self.probs):
            buf.write(f"{int(n)},{float(p):.17g}\n")
        return buf.getvalue()


def marginal_pmf(params: ModelParams, parity: Parity = Parity.EVEN, tol: float = 1e-12) -> MarginalPMF:
    """One-point stationary law on the support where weights exceed ``tol * 1e-3`` of the mode."""
    if params.generalized:
        raise ValueError("stationary marginals are only known for the classic model")
    parity = Parity(parity)
    center = params.height_shift / 2
    half = int(np.ceil(np.sqrt(80.0 / params.eps))) + 10
    n = np.arange(int(np.floor(center)) - half, int(np.ceil(center)) + half + 1)
    lw = log_weights(params, parity, n)
    total = logsumexp(lw)
    keep = lw - lw.max() > np.log(tol * 1e-3)
    lo, hi = np.flatnonzero(keep)[[0, -1]]
    n_kept = n[lo : hi + 1]
    probs = np.exp(lw[lo : hi + 1] - total)
    dropped = float(np.exp(logsumexp(np.concatenate([lw[:lo], lw[hi + 1 :], [-np.inf]])) - total))
    # beyond the wide grid the weights are below exp(-80) of the mode
    truncation_error = dropped + float(np.exp(-70.0))
    mismatch = abs(total - log_normalizer(params, parity))
    return MarginalPMF(parity, n_kept, probs, truncation_error, mismatch)


def parity_of_site(x: int) -> Parity:
    return Parity.EVEN if x % 2 == 0 else Parity.ODD


def step_up_probability(params: ModelParams, s) -> np.ndarray:
    """``P(s(x-1) = s(x) + 1 | s(x) = s) = q^s / (alpha + q^s)``."""
    a = params.eps * np.asarray(s, dtype=float) + np.log(params.alpha)
    return expit(-a)


@numba.njit(cache=True)
def _leftward_chain(s0, u, eps, log_alpha):
    out = np.empty(u.size + 1, np.int64)
    out[u.size] = s0
    s = s0
    for j in range(u.size - 1, -1, -1):
        a = eps * s + log_alpha
        if a > 0:
            e = np.exp(-a)
            p_up = e / (1.0 + e)
        else:
            p_up = 1.0 / (1.0 + np.exp(a))
        s = s + 1 if u[j] < p_up else s - 1
        out[j] = s
    return out


def sample_marginal(pmf: MarginalPMF, rng: np.random.Generator, size=None):
    cdf = np.cumsum(pmf.probs)
    u = rng.random(size) * cdf[-1]
    idx = np.searchsorted(cdf, u, side="right")
    return pmf.heights[np.minimum(idx, cdf.size - 1)]


class StationarySampler:
    """Reusable sampler for one (params, window); caches both marginals."""

    def __init__(self, params: ModelParams, domain: Domain, tol: float = 1e-12):
        if not isinstance(domain, LineWindow):
            raise ValueError("stationary data is defined on the line; use a LineWindow")
        self.params = params
        self.domain = domain
        self.pmf = marginal_pmf(params, parity_of_site(domain.x_max), tol)

    def __call__(self, rng: np.random.Generator) -> HeightFunction:
        s0 = int(sample_marginal(self.pmf, rng))
        u = rng.random(self.domain.n_sites - 1)
        values = _leftward_chain(s0, u, self.params.eps, np.log(self.params.alpha))
        return HeightFunction(self.domain, values)


def sample_stationary(params: ModelParams, domain: Domain, rng: np.random.Generator) -> HeightFunction:
    """Draw ``s(x_max)`` from its marginal, then run the chain leftwards to ``x_min``."""
    return StationarySampler(params, domain)(rng)


@dataclass(frozen=True)
class OUParams:
    theta: float = 0.5
    sigma: float = 1.0
    init_var: float = 1.0

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError("theta must be positive")
        if self.sigma < 0 or self.init_var < 0:
            raise ValueError("sigma and init_var must be nonnegative")

    @property
    def stationary_var(self) -> float:
        return self.sigma**2 / (2 * self.theta)


# Drift 1/2 and noise 1 reproduce the unit variance of the rescaled height;
# the noise coefficient 1/2 would give variance 1/4.
CALIBRATED_OU = OUParams(0.5, 1.0, 1.0)
LITERAL_OU = OUParams(0.5, 0.5, 1.0)


def spatial_ou_sample(ou: OUParams, grid, rng: np.random.Generator) -> np.ndarray:
    """Exact OU path on ``grid`` started at ``X = 0`` and run in both directions.

    The right half (X >= 0) is drawn first, then the left half with independent
    innovations.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("grid must be nonempty")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    out = np.empty_like(grid)
    z0 = np.sqrt(ou.init_var) * rng.standard_normal()
    right = np.flatnonzero(grid >= 0)
    left = np.flatnonzero(grid < 0)[::-1]
    for idx in (right, left):
        z, x = z0, 0.0
        noise = rng.standard_normal(idx.size)
        for j, i in enumerate(idx):
            h = abs(grid[i] - x)
            decay = np.exp(-ou.theta * h)
            sd = ou.sigma * np.sqrt(-np.expm1(-2 * ou.theta * h) / (2 * ou.theta))
            z = decay * z + sd * noise[j]
            out[i] = z
            x = grid[i]
    return out

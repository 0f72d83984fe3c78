"""Macroscopic rescaling, ensemble comparisons and regularity estimates."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats as sps

from .hopf_cole import theta1, transform_values
from .lattice import Ring
from .sim import Trajectory


class GridMismatch(ValueError):
    pass


class InsufficientSamples(ValueError):
    pass


MIN_SAMPLES = 50


def micro_time_index(traj: Trajectory, eps: float, T) -> np.ndarray:
    """Snapshot indices whose times equal ``eps^-2 T``."""
    target = np.atleast_1d(np.asarray(T, dtype=float)) / eps**2
    idx = np.searchsorted(traj.sample_times, target - 1e-9 * np.maximum(target, 1))
    ok = (idx < traj.sample_times.size) & np.isclose(
        traj.sample_times[np.minimum(idx, traj.sample_times.size - 1)], target, rtol=1e-9, atol=1e-12
    )
    if not np.all(ok):
        raise GridMismatch(f"snapshots do not include microscopic times {target[~ok]}")
    return idx


def _heights_at(traj: Trajectory, k: int, x: np.ndarray) -> np.ndarray:
    """Height at real positions ``x`` (linear interpolation between sites)."""
    d = traj.domain
    v = traj.snapshots[k].astype(float)
    lo = np.floor(x).astype(np.int64)
    frac = x - lo
    if isinstance(d, Ring):
        def at(i):
            m, r = np.divmod(i, d.period)
            return v[r] + d.winding * m
    else:
        def at(i):
            if np.any(i < d.x_min) or np.any(i > d.x_max):
                raise GridMismatch("observation point outside the simulated window")
            return v[i - d.x_min]
    right = np.where(frac > 0, lo + 1, lo)
    return (1 - frac) * at(lo) + frac * at(right)


def _check_ring_eps(traj: Trajectory, eps: float):
    if isinstance(traj.domain, Ring) and not np.isclose(eps * traj.domain.period, 1.0):
        raise GridMismatch(f"ring model needs eps = 1/N, got eps={eps}, N={traj.domain.period}")


def rescale_height(traj: Trajectory, eps: float, T, X, alpha: float | None = None) -> np.ndarray:
    """``sqrt(eps)(s_{T/eps^2}(X/eps) - log_q alpha)`` on the line, ``sqrt(eps)(s - chi X)`` on the ring.

    Returns an array of shape ``(len(T), len(X))``.
    """
    _check_ring_eps(traj, eps)
    X = np.atleast_1d(np.asarray(X, dtype=float))
    ks = micro_time_index(traj, eps, T)
    x_micro = X / eps
    if isinstance(traj.domain, Ring):
        shift = traj.domain.winding * X
    else:
        a = traj.params.alpha if alpha is None else alpha
        shift = -np.log(a) / eps * np.ones_like(X)
    return np.sqrt(eps) * np.array([_heights_at(traj, k, x_micro) - shift for k in ks])


def unscale_height(values, eps: float, X, shift_per_X: float = 0.0, offset: float = 0.0) -> np.ndarray:
    """Inverse of ``rescale_height`` at lattice points."""
    return np.asarray(values) / np.sqrt(eps) + shift_per_X * np.asarray(X) + offset


@dataclass
class HopfColeRescaled:
    values: np.ndarray
    taylor_gap: float


def rescale_hopf_cole(traj: Trajectory, eps: float, T, X) -> HopfColeRescaled:
    """``eps^{-1/2} Z_{T/eps^2}(X/eps)`` and ``sup |e^{theta1 T/eps^2} shat - Z|`` over the grid."""
    _check_ring_eps(traj, eps)
    X = np.atleast_1d(np.asarray(X, dtype=float))
    T = np.atleast_1d(np.asarray(T, dtype=float))
    ks = micro_time_index(traj, eps, T)
    x_micro = X / eps
    if not np.allclose(x_micro, np.round(x_micro)):
        raise GridMismatch("Hopf-Cole field is sampled at lattice points only")
    s = np.array([_heights_at(traj, k, np.round(x_micro)) for k in ks])
    t_micro = (T / eps**2)[:, None]
    z = transform_values(traj.params, s, t_micro) / np.sqrt(eps)
    shat = rescale_height(traj, eps, T, X)
    gap = float(np.max(np.abs(np.exp(theta1(eps) * t_micro) * shat - z)))
    return HopfColeRescaled(z, gap)


# ---------------------------------------------------------------- ensembles


@dataclass
class FieldEnsemble:
    meta: dict
    times: np.ndarray
    points: np.ndarray
    samples: np.ndarray  # (n, times, points)
    seeds: list = field(default_factory=list)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 3 or self.samples.shape[1:] != (len(self.times), len(self.points)):
            raise GridMismatch("samples must have shape (n, times, points)")

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    def at(self, i_time: int, i_point: int) -> np.ndarray:
        return self.samples[:, i_time, i_point]


def ks_statistic(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov distance ``sup |F_a - F_b|``."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_pvalue(d: float, n: int, m: int) -> float:
    """Two-sided p-value of a two-sample KS distance (exact for small samples)."""
    if n * m <= 10000:
        return float(_exact_two_sided(d, n, m))
    en = n * m / (n + m)
    return float(sps.kstwobign.sf(d * np.sqrt(en)))


def _exact_two_sided(d: float, n: int, m: int) -> float:
    """``P(D >= d)`` under the null by counting lattice paths that stay inside the band."""
    from math import comb

    # paths from (0,0) to (n,m); a path hits |i/n - j/m| >= d somewhere
    inside = np.zeros((n + 1, m + 1))
    tol = 1e-12
    for i in range(n + 1):
        for j in range(m + 1):
            if abs(i / n - j / m) >= d - tol:
                inside[i, j] = 0.0
                continue
            if i == 0 and j == 0:
                inside[i, j] = 1.0
                continue
            inside[i, j] = (inside[i - 1, j] if i else 0.0) + (inside[i, j - 1] if j else 0.0)
    return 1.0 - inside[n, m] / comb(n + m, n)


def ks_test(a, b) -> tuple[float, float]:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = ks_statistic(a, b)
    return d, ks_pvalue(d, a.size, b.size)


def dequantize(values, spacing: float, rng: np.random.Generator) -> np.ndarray:
    """Spread each lattice value uniformly over its cell of width ``spacing``."""
    v = np.asarray(values, dtype=float)
    return v + spacing * (rng.random(v.shape) - 0.5)


@dataclass
class MomentRow:
    mean: float
    mean_se: float
    var: float
    var_se: float
    skew: float
    skew_se: float
    kurt: float
    kurt_se: float


def moments(x) -> MomentRow:
    x = np.asarray(x, dtype=float)
    n = x.size
    m = x.mean()
    c = x - m
    v = c @ c / (n - 1)
    m4 = np.mean(c**4)
    return MomentRow(
        float(m), float(np.sqrt(v / n)),
        float(v), float(np.sqrt(max(m4 - v**2, 0.0) / n)),
        float(sps.skew(x)), float(np.sqrt(6 / n)),
        float(sps.kurtosis(x)), float(np.sqrt(24 / n)),
    )


@dataclass
class ComparisonReport:
    points: list
    ks: np.ndarray
    pvalues: np.ndarray
    moments_a: list
    moments_b: list
    cov_a: np.ndarray
    cov_b: np.ndarray
    alpha: float
    passed: np.ndarray

    def to_json(self) -> dict:
        return {
            "points": [list(map(float, p)) for p in self.points],
            "ks": self.ks.tolist(),
            "pvalues": self.pvalues.tolist(),
            "moments_a": [m.__dict__ for m in self.moments_a],
            "moments_b": [m.__dict__ for m in self.moments_b],
            "cov_a": self.cov_a.tolist(),
            "cov_b": self.cov_b.tolist(),
            "alpha": self.alpha,
            "passed": self.passed.tolist(),
        }


def ensemble_compare(a: FieldEnsemble, b: FieldEnsemble, points: Sequence[tuple[int, int]] | None = None, alpha: float = 0.01) -> ComparisonReport:
    """Per-point KS tests (Bonferroni over points), moments and cross-covariances.

    ``points`` are ``(time_index, point_index)`` pairs shared by both ensembles.
    """
    if a.n < MIN_SAMPLES or b.n < MIN_SAMPLES:
        raise InsufficientSamples(f"need at least {MIN_SAMPLES} samples per ensemble")
    if points is None:
        points = [(i, j) for i in range(len(a.times)) for j in range(len(a.points))]
    ks, pv, ma, mb = [], [], [], []
    for i, j in points:
        d, p = ks_test(a.at(i, j), b.at(i, j))
        ks.append(d)
        pv.append(p)
        ma.append(moments(a.at(i, j)))
        mb.append(moments(b.at(i, j)))
    A = np.column_stack([a.at(i, j) for i, j in points])
    B = np.column_stack([b.at(i, j) for i, j in points])
    pv = np.array(pv)
    return ComparisonReport(
        [(float(a.times[i]), float(a.points[j])) for i, j in points],
        np.array(ks), pv, ma, mb,
        np.atleast_2d(np.cov(A, rowvar=False)), np.atleast_2d(np.cov(B, rowvar=False)),
        alpha, pv > alpha / len(points),
    )


# ---------------------------------------------------------------- regularity


@dataclass
class RegularityReport:
    exp_moment: float
    space_ratio: float
    time_ratio: float
    holder_exponent: float
    lags: np.ndarray
    increment_norms: np.ndarray
    violations: list


def increment_norm(slices: np.ndarray, lag: int, k: int) -> float:
    """``(E |f(X + lag) - f(X)|^{2k})^{1/(2k)}`` averaged over positions and samples."""
    d = slices[..., lag:] - slices[..., :-lag]
    return float(np.mean(np.abs(d) ** (2 * k)) ** (1 / (2 * k)))


def holder_exponent(slices: np.ndarray, dx: float, lags: Sequence[int], k: int = 1) -> float:
    """Log-log slope of increment norms against lag length."""
    norms = np.array([increment_norm(slices, int(l), k) for l in lags])
    return float(np.polyfit(np.log(np.asarray(lags) * dx), np.log(norms), 1)[0])


def regularity_report(
    space_slices: np.ndarray,
    dx: float,
    u: float = 1.0,
    beta: float = 0.2,
    k_max: int = 2,
    time_series: np.ndarray | None = None,
    dt: float | None = None,
    lags: Sequence[int] = (1, 2, 4, 8, 16),
    C0: float | None = None,
) -> RegularityReport:
    """Near-stationarity proxies for an ensemble of fixed-time slices ``(n, points)``.

    ``exp_moment`` is ``max_X ||e^{u |f(X)|}||_{2 k_max}``; ``space_ratio`` is the
    largest ``||f(X1) - f(X2)||_{2k} / |X1 - X2|^{2 beta}`` over ``k <= k_max``
    and the lags; ``time_ratio`` is the temporal analogue on ``time_series``.
    """
    space_slices = np.asarray(space_slices, dtype=float)
    lags = [l for l in lags if l < space_slices.shape[-1]]
    exp_moment = float(np.max(np.mean(np.exp(2 * k_max * u * np.abs(space_slices)), axis=0) ** (1 / (2 * k_max))))
    norms = np.array([[increment_norm(space_slices, l, k) for l in lags] for k in range(1, k_max + 1)])
    h = np.asarray(lags) * dx
    space_ratio = float(np.max(norms / h ** (2 * beta))) if lags else 0.0
    time_ratio = 0.0
    if time_series is not None and dt is not None:
        ts = np.asarray(time_series, dtype=float)
        tl = [l for l in (1, 2, 4, 8) if l < ts.shape[-1]]
        tn = np.array([[increment_norm(ts, l, k) for l in tl] for k in range(1, k_max + 1)])
        time_ratio = float(np.max(tn / (np.asarray(tl) * dt) ** beta)) if tl else 0.0
    if lags and np.all(norms[0] > 0):
        exponent = float(np.polyfit(np.log(h), np.log(norms[0]), 1)[0])
    else:
        exponent = float("nan")
    violations = []
    if C0 is not None:
        for name, val in (("exp_moment", exp_moment), ("space_ratio", space_ratio), ("time_ratio", time_ratio)):
            if val > C0:
                violations.append(name)
    return RegularityReport(exp_moment, space_ratio, time_ratio, exponent, np.asarray(lags), norms, violations)


def dequantized_cdf(heights, probs, scale: float, center: float, spacing: float):
    """CDF of ``scale * (h - center)`` jittered uniformly over cells of width ``spacing``.

    ``heights`` and ``probs`` describe an atomic law; the result is a callable.
    """
    loc = scale * (np.asarray(heights, dtype=float) - center)
    p = np.asarray(probs, dtype=float)

    def cdf(x):
        x = np.asarray(x, dtype=float)
        w = np.clip((x[..., None] - loc + spacing / 2) / spacing, 0.0, 1.0)
        return w @ p

    return cdf


def population_ks_to_normal(heights, probs, scale: float, center: float, spacing: float, sd: float = 1.0) -> float:
    """Exact ``sup |F - Phi_sd|`` for a dequantized atomic law.

    The jittered CDF is piecewise linear, so the supremum is attained at a cell
    edge or at an interior point where the normal density equals the slope.
    """
    cdf = dequantized_cdf(heights, probs, scale, center, spacing)
    loc = scale * (np.asarray(heights, dtype=float) - center)
    edges = np.unique(np.concatenate([loc - spacing / 2, loc + spacing / 2]))
    fine = np.linspace(edges[0], edges[-1], 200001)
    x = np.concatenate([edges, fine])
    return float(np.max(np.abs(cdf(x) - sps.norm.cdf(x, scale=sd))))

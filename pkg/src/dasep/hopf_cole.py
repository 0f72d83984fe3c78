"""Microscopic Hopf-Cole transform and the martingales it produces.

For ``q = e^{-eps}`` and effective height ``h = s - log_q(alpha)``,

    Z_t(x) = e^{theta1 t} (alpha^{1/2} q^{-s/2} - alpha^{-1/2} q^{s/2}) = 2 e^{theta1 t} sinh(eps h / 2)

with ``theta1 = (1 - sqrt q)^2`` and ``theta2 = 2 sqrt q``.  Applying the
generator gives ``L Z + theta1 Z = (theta2 / 2) Delta Z`` exactly, so
``M_t = Z_t - Z_0 - int_0^t (theta2/2) Delta Z_r dr`` is a martingale.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .lattice import HeightFunction, Ring
from .model import ModelParams, rates_from_exponent
from .sim import MissingEventLog, Trajectory


def theta1(eps: float) -> float:
    return float(np.expm1(-eps / 2) ** 2)


def theta2(eps: float) -> float:
    return float(2 * np.exp(-eps / 2))


def _g(eps: float, h):
    return 2.0 * np.sinh(eps * np.asarray(h, dtype=float) / 2)


def transform_values(params: ModelParams, s, t=0.0):
    h = np.asarray(s, dtype=float) - params.height_shift
    return np.exp(theta1(params.eps) * np.asarray(t, dtype=float)) * _g(params.eps, h)


def transform_literal(params: ModelParams, s, t=0.0):
    """Direct evaluation of ``e^{theta1 t}(alpha^{1/2} q^{-s/2} - alpha^{-1/2} q^{s/2})``."""
    q, a = params.q, params.alpha
    s = np.asarray(s, dtype=float)
    return np.exp(theta1(params.eps) * t) * (np.sqrt(a) * q ** (-s / 2) - q ** (s / 2) / np.sqrt(a))


def q_from_z(z, t: float, eps: float):
    """``(q^{-s/2}, q^{s/2})`` recovered from ``Z`` when ``alpha = 1``."""
    zt = np.asarray(z, dtype=float) / np.sqrt(eps)
    root = np.sqrt(1 + 0.25 * eps * np.exp(-2 * t * theta1(eps)) * zt**2)
    half = 0.5 * np.sqrt(eps) * np.exp(-t * theta1(eps)) * zt
    # the two roots multiply to 1; take the small one as a reciprocal to avoid cancellation
    big = root + np.abs(half)
    return np.where(half >= 0, big, 1 / big), np.where(half >= 0, 1 / big, big)


@dataclass
class TransformField:
    times: np.ndarray
    sites: np.ndarray
    z: np.ndarray
    theta1: float
    theta2: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("time,site,value\n")
        for i, t in enumerate(self.times):
            for x, v in zip(self.sites, self.z[i]):
                buf.write(f"{float(t):.17g},{int(x)},{float(v):.17g}\n")
        return buf.getvalue()


def hopf_cole_transform(traj: Trajectory, alpha: float | None = None) -> TransformField:
    params = traj.params
    if params.generalized:
        raise ValueError("the transform applies to the classic model")
    if alpha is not None and alpha != params.alpha:
        params = ModelParams(params.eps, alpha)
    t = traj.sample_times[:, None]
    return TransformField(
        traj.sample_times.copy(),
        traj.sites.copy(),
        transform_values(params, traj.snapshots, t),
        theta1(params.eps),
        theta2(params.eps),
    )


# ---------------------------------------------------------------- local algebra


def local_generator(params: ModelParams, s_left, s, s_right):
    """``(L Z)(x)`` at ``t = 0`` for arrays of local configurations."""
    s_left, s, s_right = (np.asarray(v, dtype=float) for v in (s_left, s, s_right))
    h = s - params.height_shift
    eps = params.eps
    down, up = rates_from_exponent(eps, h)
    is_max = (s > s_left) & (s > s_right)
    is_min = (s < s_left) & (s < s_right)
    g0 = _g(eps, h)
    return np.where(is_max, down * (_g(eps, h - 2) - g0), 0.0) + np.where(is_min, up * (_g(eps, h + 2) - g0), 0.0)


def local_laplacian(params: ModelParams, s_left, s, s_right):
    shift = params.height_shift
    eps = params.eps
    return (
        _g(eps, np.asarray(s_left, dtype=float) - shift)
        + _g(eps, np.asarray(s_right, dtype=float) - shift)
        - 2 * _g(eps, np.asarray(s, dtype=float) - shift)
    )


def generator_residual(params: ModelParams, s_left, s, s_right):
    """``L Z + theta1 Z - (theta2/2) Delta Z`` at ``t = 0``."""
    z = transform_values(params, s)
    return (
        local_generator(params, s_left, s, s_right)
        + theta1(params.eps) * z
        - theta2(params.eps) / 2 * local_laplacian(params, s_left, s, s_right)
    )


@dataclass
class GeneratorCheck:
    max_residual: float
    max_abs_z: float
    n_configs: int

    @property
    def relative(self) -> float:
        return self.max_residual / self.max_abs_z


def slope_patterns():
    """All four ``(grad_minus, grad_plus)`` pairs."""
    return [(gm, gp) for gm in (-1, 1) for gp in (-1, 1)]


def generator_identity_check(eps_grid: Sequence[float], s_range=(-20, 20), alpha: float = 1.0) -> GeneratorCheck:
    s = np.arange(s_range[0], s_range[1] + 1)
    worst, zmax, count = 0.0, 0.0, 0
    for eps in eps_grid:
        p = ModelParams(float(eps), alpha)
        for gm, gp in slope_patterns():
            r = generator_residual(p, s - gm, s, s + gp)
            worst = max(worst, float(np.max(np.abs(r))))
            zmax = max(zmax, float(np.max(np.abs(transform_values(p, s)))))
            count += s.size
    return GeneratorCheck(worst, zmax, count)


def exact_qv_rate_local(params: ModelParams, s_left, s, s_right, t=0.0):
    """Exact ``d<M(x)>/dt``: jump rate times squared jump of ``Z``."""
    s_left, s, s_right = (np.asarray(v, dtype=float) for v in (s_left, s, s_right))
    eps = params.eps
    h = s - params.height_shift
    down, up = rates_from_exponent(eps, h)
    is_max = (s > s_left) & (s > s_right)
    is_min = (s < s_left) & (s < s_right)
    g0 = _g(eps, h)
    rate = np.where(is_max, down * (_g(eps, h - 2) - g0) ** 2, 0.0) + np.where(
        is_min, up * (_g(eps, h + 2) - g0) ** 2, 0.0
    )
    return np.exp(2 * theta1(eps) * np.asarray(t)) * rate


def leading_qv_rate_local(params: ModelParams, s_left, s, s_right, t=0.0, prefactor: float = 0.5):
    """``prefactor eps^2 e^{2 theta1 t} q^{-1} (1+q^{-h}) (q^{(h_+ + h_-)/2} + 1)(1 - grad+ grad-)``.

    The exact rate is matched to leading order by ``prefactor = 1/2``; a
    prefactor of ``1/4`` undershoots it by a factor tending to 2.
    """
    s_left, s, s_right = (np.asarray(v, dtype=float) for v in (s_left, s, s_right))
    eps, q = params.eps, params.q
    shift = params.height_shift
    h = s - shift
    hl, hr = s_left - shift, s_right - shift
    ind = 1 - (s_right - s) * (s - s_left)
    return (
        prefactor * eps**2 * np.exp(2 * theta1(eps) * np.asarray(t)) / q
        * (1 + np.exp(eps * h)) * (np.exp(-eps * (hl + hr) / 2) + 1) * ind
    )


def qv_upper_bound_local(params: ModelParams, s, t=0.0):
    z = transform_values(params, s, t)
    return 2 * params.eps**2 * (z**2 + 2 * np.exp(2 * theta1(params.eps) * np.asarray(t)))


def _neighbourhood(h: HeightFunction, x: int):
    return h.at(x - 1) if _resolvable(h, x - 1) else None, h.at(x), h.at(x + 1) if _resolvable(h, x + 1) else None


def _resolvable(h: HeightFunction, x: int) -> bool:
    d = h.domain
    return isinstance(d, Ring) or d.x_min <= x <= d.x_max


def _interior(h: HeightFunction, x: int):
    sl, s, sr = _neighbourhood(h, x)
    if sl is None or sr is None:
        raise ValueError(f"site {x} needs both neighbours inside the domain")
    return sl, s, sr


def predicted_qv_rate(h: HeightFunction, x: int, t: float, params: ModelParams) -> tuple[float, float]:
    """(leading-order rate, upper bound ``2 eps^2 (Z^2 + 2 e^{2 theta1 t})``)."""
    sl, s, sr = _interior(h, x)
    lead = leading_qv_rate_local(params, sl, s, sr, t)
    return float(lead), float(qv_upper_bound_local(params, s, t))


def exact_qv_rate(h: HeightFunction, x: int, t: float, params: ModelParams) -> float:
    sl, s, sr = _interior(h, x)
    return float(exact_qv_rate_local(params, sl, s, sr, t))


def gradient_identity_residual(h: HeightFunction, x: int, t: float, params: ModelParams) -> float:
    """``eps^-2 e^{-2 theta1 t} grad+Z grad-Z - grad+s grad-s``."""
    sl, s, sr = _interior(h, x)
    z = transform_values(params, np.array([sl, s, sr], dtype=float), t)
    gp, gm = z[2] - z[1], z[1] - z[0]
    th = theta1(params.eps)
    return float(params.eps**-2 * np.exp(-2 * th * t) * gp * gm - (sr - s) * (s - sl))


def gradient_residual_bound(h: HeightFunction, x: int, t: float, params: ModelParams, c: float) -> float:
    z = float(transform_values(params, h.at(x), t))
    return 0.25 * (np.exp(-theta1(params.eps) * t) * z) ** 2 + c * params.eps


# ---------------------------------------------------------------- martingale paths


@dataclass
class MartingalePath:
    site: int
    times: np.ndarray
    m: np.ndarray
    qv_pred: np.ndarray  # integrated leading-order rate
    qv_exact: np.ndarray  # integrated exact rate
    qv_emp: np.ndarray  # sum of squared jumps
    bound_violations: int  # visited states whose exact rate exceeds the upper bound
    jump_times: np.ndarray
    jump_sizes: np.ndarray
    interval_starts: np.ndarray  # piecewise-constant local states for the compensator
    interval_g: np.ndarray  # (n_intervals, 3) values of 2 sinh(eps h / 2) at x-1, x, x+1


def _window_positions(traj: Trajectory, x: int):
    d = traj.domain
    n = d.n_sites
    h0 = traj.initial
    i = h0.index(x)
    if isinstance(d, Ring):
        left, right = (i - 1) % n, (i + 1) % n
        off_l = -d.winding if i == 0 else 0
        off_r = d.winding if i == n - 1 else 0
    else:
        if not 0 < i < n - 1:
            raise ValueError(f"site {x} is not interior to the window")
        left, right, off_l, off_r = i - 1, i + 1, 0, 0
    return (left, i, right), (off_l, 0, off_r)


def local_history(traj: Trajectory, x: int):
    """Interval start times and ``(s(x-1), s(x), s(x+1))`` on each interval, plus jump data at ``x``."""
    if not traj.has_events:
        raise MissingEventLog("martingale paths need the event log")
    pos, off = _window_positions(traj, x)
    sel = np.isin(traj.event_sites, pos)
    ev_x = traj.event_sites[sel]
    ev_t = traj.event_times[sel]
    dh = 2 * traj.event_dirs[sel].astype(np.int64)
    states = np.empty((ev_t.size + 1, 3), dtype=np.int64)
    for k, (p, o) in enumerate(zip(pos, off)):
        states[:, k] = traj.initial.values[p] + o + np.concatenate([[0], np.cumsum(np.where(ev_x == p, dh, 0))])
    starts = np.concatenate([[0.0], ev_t])
    at_x = ev_x == pos[1]
    return starts, states, at_x


def martingale_path(traj: Trajectory, x: int, times=None) -> MartingalePath:
    """``M_t(x)`` with closed-form compensator integrals between events."""
    params = traj.params
    eps = params.eps
    th1, th2 = theta1(eps), theta2(eps)
    times = traj.sample_times if times is None else np.asarray(times, dtype=float)
    starts, states, at_x = local_history(traj, x)
    hs = states - params.height_shift
    g = _g(eps, hs)
    lap = g[:, 0] + g[:, 2] - 2 * g[:, 1]
    ex = exact_qv_rate_local(params, states[:, 0], states[:, 1], states[:, 2])
    ld = leading_qv_rate_local(params, states[:, 0], states[:, 1], states[:, 2])
    bound = qv_upper_bound_local(params, states[:, 1])
    violations = int(np.count_nonzero(ex > bound * (1 + 1e-12)))

    ends = np.concatenate([starts[1:], [np.inf]])

    def integrate(coef, rate_mult):
        # int over [a, min(b, t)] of coef e^{rate_mult theta1 r} dr, cumulated over intervals
        out = np.empty(times.size)
        k_of_t = np.searchsorted(starts, times, side="right") - 1
        full = _exp_integral(coef, starts, ends, rate_mult * th1)
        cum = np.concatenate([[0.0], np.cumsum(full[:-1])])
        for j, (t, k) in enumerate(zip(times, k_of_t)):
            out[j] = cum[k] + _exp_integral(coef[k : k + 1], starts[k : k + 1], np.array([t]), rate_mult * th1)[0]
        return out

    k_of_t = np.searchsorted(starts, times, side="right") - 1
    z_t = np.exp(th1 * times) * g[k_of_t, 1]
    z_0 = g[0, 1]
    drift = integrate(th2 / 2 * lap, 1)
    m = z_t - z_0 - drift

    jump_idx = np.flatnonzero(at_x) + 1  # state index after each jump at x
    jump_t = starts[jump_idx]
    jumps = np.exp(th1 * jump_t) * (g[jump_idx, 1] - g[jump_idx - 1, 1])
    cum_sq = np.concatenate([[0.0], np.cumsum(jumps**2)])
    qv_emp = cum_sq[np.searchsorted(jump_t, times, side="right")]

    return MartingalePath(
        site=int(x),
        times=times.copy(),
        m=m,
        qv_pred=integrate(ld, 2),
        qv_exact=integrate(ex, 2),
        qv_emp=qv_emp,
        bound_violations=violations,
        jump_times=jump_t,
        jump_sizes=jumps,
        interval_starts=starts,
        interval_g=g,
    )


def _exp_integral(coef, a, b, rate):
    """``coef * int_a^b e^{rate r} dr`` elementwise, finite for ``b = inf`` only when coef is unused."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    width = np.where(np.isfinite(b), b - a, 0.0)
    if rate == 0:
        return coef * width
    return coef * np.exp(rate * a) * np.expm1(rate * width) / rate

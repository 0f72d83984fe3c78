"""Semi-discrete heat kernels, the gradient kernel, and Duhamel reconstruction.

``pk_t(x) = e^{-theta2 t} I_x(theta2 t)`` is the law at time ``t`` of a
continuous-time walk jumping +-1 at rate ``theta2 / 2`` each way.  The rescaled
kernel lives on ``eps Z`` with rate ``eps^-2`` each way and total mass
``eps sum_x p_t(x) = 1``, so ``pk_t(x) = eps p_{eps^2 theta2 t / 2}(eps x)``.
"""
from __future__ import annotations

import enum
import io
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import integrate
from scipy.special import ive

from .hopf_cole import MartingalePath, theta1, theta2


class NegativeTime(ValueError):
    pass


class WindowTooSmall(ValueError):
    pass


class CoverageError(ValueError):
    pass


class Flavor(str, enum.Enum):
    MICRO = "micro"
    RESCALED = "rescaled"
    RING = "ring"


def walk_kernel(rate_total: float, t, offsets) -> np.ndarray:
    """``P(X_t = x)`` for a walk jumping +-1 at ``rate_total / 2`` each way; shape (times, offsets)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    x = np.asarray(offsets)
    return ive(np.abs(x)[None, :], rate_total * t[:, None])


def tail_offset(rate_total: float, t_max: float, tail: float = 1e-13) -> int:
    """Offset beyond which the two-sided walk mass is below ``tail`` up to ``t_max`` (Bernstein bound)."""
    var = rate_total * t_max
    m = 1
    while 2 * np.exp(-(m**2) / (2 * (var + m / 3))) > tail:
        m = int(m * 1.25) + 1
    return m


@dataclass
class KernelTable:
    eps: float
    rate: float  # jump rate in each direction
    times: np.ndarray
    offsets: np.ndarray
    values: np.ndarray  # (times, offsets)
    flavor: Flavor = Flavor.MICRO
    period: int | None = None

    @property
    def spacing(self) -> float:
        return self.eps if self.flavor is Flavor.RESCALED else 1.0

    def mass(self) -> np.ndarray:
        return self.spacing * self.values.sum(axis=1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t,x,value\n")
        for i, t in enumerate(self.times):
            for x, v in zip(self.offsets, self.values[i]):
                buf.write(f"{float(t):.17g},{int(x)},{float(v):.17g}\n")
        return buf.getvalue()


def heat_kernel(eps: float, times, max_offset: int | None = None, flavor=Flavor.MICRO, period: int | None = None) -> KernelTable:
    """Tabulate a kernel at ``times`` for offsets ``-max_offset..max_offset``.

    ``micro``: ``pk_t(x)``.  ``rescaled``: ``p_t(eps x)`` with ``p_0(0) = 1/eps``.
    ``ring``: ``pk_t`` on a ring of ``period`` sites via its cosine-mode sum.
    """
    times = np.asarray(times, dtype=float)
    if np.any(times < 0):
        raise NegativeTime("kernel times must be nonnegative")
    flavor = Flavor(flavor)
    th2 = theta2(eps)
    t_max = float(times.max()) if times.size else 0.0
    if flavor is Flavor.MICRO:
        m = tail_offset(th2, t_max) if max_offset is None else max_offset
        x = np.arange(-m, m + 1)
        vals = walk_kernel(th2, times, x)
        return KernelTable(eps, th2 / 2, times, x, vals, flavor)
    if flavor is Flavor.RESCALED:
        rate = eps**-2
        m = tail_offset(2 * rate, t_max) if max_offset is None else max_offset
        x = np.arange(-m, m + 1)
        vals = walk_kernel(2 * rate, times, x) / eps
        return KernelTable(eps, rate, times, x, vals, flavor)
    if period is None:
        raise ValueError("ring kernel needs a period")
    x = np.arange(period)
    k = np.arange(period)
    lam = th2 * (1 - np.cos(2 * np.pi * k / period))
    modes = np.cos(2 * np.pi * np.outer(k, x) / period)
    vals = np.exp(-np.outer(times, lam)) @ modes / period
    return KernelTable(eps, th2 / 2, times, x, vals, flavor, period)


def heat_kernel_ode(eps: float, times, max_offset: int, dt: float = 1e-3) -> np.ndarray:
    """RK4 integration of ``d/dt pk = (theta2/2) Delta pk`` with zero values beyond ``max_offset``."""
    c = theta2(eps) / 2
    n = 2 * max_offset + 1
    p = np.zeros(n)
    p[max_offset] = 1.0

    def f(u):
        lap = -2 * u
        lap[1:] += u[:-1]
        lap[:-1] += u[1:]
        return c * lap

    out = np.empty((len(times), n))
    t = 0.0
    for i, target in enumerate(times):
        steps = int(np.ceil((target - t) / dt - 1e-9))
        h = (target - t) / steps if steps else 0.0
        for _ in range(steps):
            k1 = f(p)
            k2 = f(p + h / 2 * k1)
            k3 = f(p + h / 2 * k2)
            k4 = f(p + h * k3)
            p = p + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t = target
        out[i] = p
    return out


def chapman_kolmogorov_error(eps: float, t: float, s: float, max_offset: int | None = None) -> float:
    m = max_offset or tail_offset(theta2(eps), t + s)
    x = np.arange(-m, m + 1)
    pt, ps, pts = walk_kernel(theta2(eps), [t, s, t + s], x)
    conv = np.convolve(pt, ps)[m : 3 * m + 1]
    return float(np.max(np.abs(conv - pts)))


# ---------------------------------------------------------------- fitted bounds


@dataclass
class BoundFit:
    name: str
    constant: float
    worst_time: float
    worst_offset: float


def kernel_bound_report(table: KernelTable, u: float = 1.0, v: float = 0.25, alpha: float = 1.0) -> dict[str, BoundFit]:
    """Smallest constants making each microscopic kernel bound hold on the table.

    Times are microscopic.  Ratios are taken only where the kernel exceeds
    ``1e-250`` so that underflow does not masquerade as a violation.
    """
    if not 0 <= v < 0.5:
        raise ValueError("v must lie in [0, 1/2)")
    if table.flavor is not Flavor.MICRO:
        raise ValueError("bounds are stated for the microscopic kernel")
    eps = table.eps
    t = table.times
    x = table.offsets
    p = table.values
    rt = np.maximum(np.sqrt(t), 1.0)[:, None]
    fits = {}

    def record(name, ratio):
        ratio = np.where(np.isfinite(ratio), ratio, 0.0)
        i, j = np.unravel_index(np.argmax(ratio), ratio.shape)
        fits[name] = BoundFit(name, float(ratio[i, j]), float(t[i]), float(x[j] if j < x.size else j))

    record("sup", p * rt)
    moment = (p * (eps * np.abs(x)) ** alpha * np.exp(u * eps * np.abs(x))).sum(axis=1, keepdims=True)
    record("moment", moment / rt**alpha)
    grad = np.abs(np.diff(p, axis=1))
    gscale = np.minimum(np.where(t > 0, t, 1.0) ** -1.5, 1.0)[:, None]
    record("gradient", grad / gscale)
    # spatial Hoelder over all offset pairs at distance d
    best = np.zeros((t.size, 1))
    for d in range(1, min(x.size, 64)):
        diff = np.abs(p[:, d:] - p[:, :-d]).max(axis=1, keepdims=True)
        best = np.maximum(best, diff * rt ** (1 + v) / (eps * d) ** (2 * v))
    record("space_holder", best)
    # time comparisons between consecutive tabulated times
    if t.size > 1:
        t1, t2 = t[:-1, None], t[1:, None]
        p1, p2 = p[:-1], p[1:]
        ok = p1 > 1e-250
        ratio = np.where(ok, p2 / np.where(ok, p1, 1.0) / np.exp(eps**2 * (t2 - t1)), 0.0)
        record("time_comparison", ratio)
        rt1 = np.maximum(np.sqrt(t1), 1.0)
        record("time_holder", np.abs(p1 - p2) * rt1 ** (1 + v) / (eps**2 * (t2 - t1)) ** (v / 2))
    return fits


def stability(constants: Mapping[float, float], factor: float = 2.0) -> bool:
    """True when all fitted constants across ``eps`` agree within ``factor``."""
    vals = np.array(list(constants.values()), dtype=float)
    return bool(np.all(np.isfinite(vals)) and vals.max() <= factor * vals.min())


# ---------------------------------------------------------------- gradient kernel


def gradient_sum_unit(t, max_offset: int | None = None) -> np.ndarray:
    """``sum_x K_t(x)`` for ``eps = 1`` computed by summing the lattice product."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.empty(t.size)
    for i, ti in enumerate(t):
        m = max_offset or tail_offset(2.0, ti, 1e-16) + 2
        x = np.arange(-m - 1, m + 2)
        p = walk_kernel(2.0, ti, x)[0]
        gm = p[1:-1] - p[:-2]
        gp = p[2:] - p[1:-1]
        out[i] = np.sum(gm * gp)
    return out


def gradient_abs_sum_unit(t, a_micro: float = 0.0) -> np.ndarray:
    """``sum_x |K_t(x)| e^{a_micro |x|}`` for ``eps = 1``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.empty(t.size)
    for i, ti in enumerate(t):
        m = tail_offset(2.0, ti, 1e-16) + 2 + int(20 * a_micro * (ti + 1))
        x = np.arange(-m - 1, m + 2)
        p = walk_kernel(2.0, ti, x)[0]
        k = (p[1:-1] - p[:-2]) * (p[2:] - p[1:-1])
        out[i] = np.sum(np.abs(k) * np.exp(a_micro * np.abs(x[1:-1])))
    return out


def _time_integral(f, t_end: float) -> float:
    """Adaptive quadrature over dyadically growing pieces of ``[0, t_end]``."""
    edges = [0.0]
    e = 0.5
    while e < t_end:
        edges.append(e)
        e *= 2
    edges.append(t_end)
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        val, _ = integrate.quad(lambda s: float(f(s)[0]), a, b, epsabs=1e-13, epsrel=1e-11, limit=200)
        total += val
    return total


def gradient_kernel_integral(eps: float, T: float) -> float:
    """``S(T) = sum_{x in eps Z} int_0^T K^eps_t(x) dt`` by quadrature of the lattice sum."""
    return eps**-2 * _time_integral(gradient_sum_unit, eps**-2 * T)


def gradient_kernel_integral_closed(eps: float, T: float) -> float:
    """Closed form ``-eps^-2 ive(1, 4 T / eps^2) / 2``."""
    return -0.5 * eps**-2 * float(ive(1, 4 * T / eps**2))


@dataclass
class GradientKernelRecord:
    eps: float
    T: np.ndarray
    S: np.ndarray
    S_closed: np.ndarray
    slope: float
    c0: float
    c1: float
    a: float
    abs_integral: float
    extrapolated_limit: float = field(default=0.0)


def gradient_kernel_report(eps: float, T_grid, a: float = 0.0, T_bound: float = 1.0) -> GradientKernelRecord:
    """Decay of ``S(T)`` over ``T_grid`` and the weighted absolute bound on ``[0, T_bound]``.

    The absolute bound is a fixed-horizon statement, so it is evaluated at
    ``T_bound`` rather than at the end of the decay grid.
    """
    T_grid = np.asarray(T_grid, dtype=float)
    S = np.array([gradient_kernel_integral(eps, T) for T in T_grid])
    S_closed = np.array([gradient_kernel_integral_closed(eps, T) for T in T_grid])
    slope = float(np.polyfit(np.log(T_grid), np.log(np.abs(S)), 1)[0])
    c0 = float(np.max(np.abs(S) * eps * np.sqrt(np.maximum(T_grid, eps**2))))
    # weight e^{a|x|} for x in eps Z is e^{a eps |k|} on unit lattice sites k
    abs_int = eps**-2 * _time_integral(lambda s: gradient_abs_sum_unit(s, a * eps), eps**-2 * T_bound)
    c1 = float(eps**2 * abs_int)
    # S(T) ~ -k / sqrt(T): extrapolate the fitted power law to T -> infinity
    k = np.polyfit(T_grid**-0.5, S, 1)
    return GradientKernelRecord(eps, T_grid, S, S_closed, slope, c0, c1, a, abs_int, float(k[1]))


# ---------------------------------------------------------------- Duhamel


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(10)


def _pieces(a: float, b: float, width: float):
    n = max(int(np.ceil((b - a) / width)), 1)
    e = np.linspace(a, b, n + 1)
    return e[:-1], e[1:]


def discrete_duhamel(
    initial,
    sites,
    increments: Mapping[int, MartingalePath],
    eps: float,
    t: float,
    targets,
    tol: float = 1e-8,
    piece: float = 0.5,
) -> np.ndarray:
    """Mild-form value of ``eps^{-1/2} Z_t`` at ``targets``.

    ``initial`` is ``eps^{-1/2} Z_0`` on ``sites``.  Each martingale in
    ``increments`` is split into its jumps and its absolutely continuous part
    ``e^{theta1 r} ((theta1 - (theta2/2) Delta) g)`` on each interval between
    local events; the latter is integrated against the kernel by Gauss-Legendre
    on sub-intervals of length at most ``piece``.
    """
    th1, th2 = theta1(eps), theta2(eps)
    sites = np.asarray(sites)
    targets = np.asarray(targets)
    initial = np.asarray(initial, dtype=float)
    scale = eps**-0.5
    covered = np.array(sorted(increments))
    reach = int(np.max(np.abs(targets[:, None] - sites[None, :])))
    k_t = walk_kernel(th2, t, np.arange(reach + 1))[0]
    for x in targets:
        outside = ~np.isin(sites, covered)
        mass_out = k_t[np.abs(x - sites[outside])].sum() + (1 - k_t[np.abs(x - sites)].sum())
        if mass_out > tol:
            raise CoverageError(f"kernel mass {mass_out:.2e} at site {x} falls outside the covered sites")

    out = ive(np.abs(targets[:, None] - sites[None, :]), th2 * t) @ initial
    for y, mp in increments.items():
        d = np.abs(targets - y)
        # jumps before t
        sel = mp.jump_times <= t
        if np.any(sel):
            kj = ive(d[:, None], th2 * (t - mp.jump_times[sel])[None, :])
            out += scale * kj @ mp.jump_sizes[sel]
        # absolutely continuous part
        g = mp.interval_g
        coef = th1 * g[:, 1] - th2 / 2 * (g[:, 0] + g[:, 2] - 2 * g[:, 1])
        starts = mp.interval_starts
        ends = np.concatenate([starts[1:], [np.inf]])
        nodes, weights = [], []
        for a, b, c in zip(starts, ends, coef):
            if a >= t:
                break
            b = min(b, t)
            if c == 0 or b <= a:
                continue
            lo, hi = _pieces(a, b, piece)
            half = (hi - lo)[:, None] / 2
            r = (lo[:, None] + half * (_GL_NODES[None, :] + 1)).ravel()
            w = (half * _GL_WEIGHTS[None, :]).ravel() * c * np.exp(th1 * r)
            nodes.append(r)
            weights.append(w)
        if nodes:
            r = np.concatenate(nodes)
            w = np.concatenate(weights)
            out += scale * ive(d[:, None], th2 * (t - r)[None, :]) @ w
    return out

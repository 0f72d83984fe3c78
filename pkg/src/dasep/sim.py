"""Exact continuous-time simulation of the dynamic ASEP height function.

Every strict local maximum of ``s`` flips down (``s -> s - 2``) at rate
``a_down(s)`` and every strict local minimum flips up at rate ``a_up(s)``.
Trajectories are produced by the direct Gillespie method: an exponential
waiting time from the total rate, then a site drawn proportionally to its rate.

The compiled kernel keeps per-site rates in a binary sum tree.  Internal nodes
are always recomputed from their two children, so the total rate is a pure
function of the leaves and never accumulates drift.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numba
import numpy as np

from .lattice import Boundary, Flip, HeightFunction, LineWindow, Ring, eligibility
from .model import ModelParams, effective_height, jump_rates, rates_from_exponent
from .rng import seed_record, stream

MODE_RING, MODE_FROZEN, MODE_REFLECTING = 0, 1, 2
STATUS_DONE, STATUS_TABLE, STATUS_LOG = 0, 1, 2

FROZEN = None  # returned by step_event when no site can flip


@dataclass(frozen=True)
class Event:
    time: float
    site: int
    direction: Flip


@dataclass
class Trajectory:
    params: ModelParams
    initial: HeightFunction
    t_end: float
    sample_times: np.ndarray
    snapshots: np.ndarray  # (n_times, n_sites) int64
    n_events: int
    seed: dict
    event_times: Optional[np.ndarray] = None
    event_sites: Optional[np.ndarray] = None  # array positions, not site labels
    event_dirs: Optional[np.ndarray] = None

    @property
    def has_events(self) -> bool:
        return self.event_times is not None

    @property
    def domain(self):
        return self.initial.domain

    @property
    def sites(self) -> np.ndarray:
        return self.initial.sites

    def events(self) -> list[Event]:
        if not self.has_events:
            raise MissingEventLog("trajectory was simulated without an event log")
        sites = self.sites
        return [
            Event(float(t), int(sites[i]), Flip(int(d)))
            for t, i, d in zip(self.event_times, self.event_sites, self.event_dirs)
        ]

    def snapshot(self, k: int) -> HeightFunction:
        return HeightFunction(self.domain, self.snapshots[k].copy())

    def replay(self) -> np.ndarray:
        """Rebuild every snapshot from the initial state and the event log."""
        if not self.has_events:
            raise MissingEventLog("trajectory was simulated without an event log")
        v = self.initial.values.copy()
        out = np.empty_like(self.snapshots)
        j = 0
        n = self.event_times.size
        for k, ts in enumerate(self.sample_times):
            while j < n and self.event_times[j] <= ts:
                v[self.event_sites[j]] += 2 * int(self.event_dirs[j])
                j += 1
            out[k] = v
        return out

    def site_paths(self, positions: Sequence[int]):
        """Per-position step functions ``(jump_times, heights)`` from the event log.

        ``heights[k]`` holds on ``[jump_times[k], jump_times[k+1])`` with
        ``jump_times[0] = 0``.
        """
        if not self.has_events:
            raise MissingEventLog("trajectory was simulated without an event log")
        out = {}
        for p in positions:
            sel = self.event_sites == p
            times = np.concatenate([[0.0], self.event_times[sel]])
            steps = 2 * self.event_dirs[sel].astype(np.int64)
            heights = self.initial.values[p] + np.concatenate([[0], np.cumsum(steps)])
            out[int(p)] = (times, heights)
        return out


class MissingEventLog(RuntimeError):
    pass


# ---------------------------------------------------------------- rate tables


def _domain_mode(domain) -> int:
    if isinstance(domain, Ring):
        return MODE_RING
    return MODE_REFLECTING if domain.boundary is Boundary.REFLECTING else MODE_FROZEN


def _per_site_columns(params: ModelParams, domain) -> bool:
    return params.generalized and isinstance(domain, Ring) and domain.winding != 0


def rate_tables(params: ModelParams, domain, s_lo: int, s_hi: int):
    """Down/up rate tables indexed ``[s - s_lo, column]``.

    There is one column unless the generalized rates depend on the site
    through ``chi x / N``, in which case column ``i`` belongs to array position ``i``.
    """
    s = np.arange(s_lo, s_hi + 1, dtype=float)
    if _per_site_columns(params, domain):
        x = domain.sites.astype(float)
        S, X = np.meshgrid(s, x, indexing="ij")
        h = effective_height(params, S, X, domain)
    else:
        h = effective_height(params, s, np.zeros_like(s), domain)[:, None]
    down, up = rates_from_exponent(params.eps, h)
    return np.ascontiguousarray(down), np.ascontiguousarray(up)


# ---------------------------------------------------------------- compiled kernel


@numba.njit(cache=True, nogil=True)
def _site_rate(v, i, n, mode, chi, down_tab, up_tab, s_lo, per_site):
    if mode == MODE_RING:
        left = v[i - 1] if i > 0 else v[n - 1] - chi
        right = v[i + 1] if i < n - 1 else v[0] + chi
    else:
        if i == 0:
            if mode == MODE_FROZEN:
                return 0.0, 0
            left = v[1]
        else:
            left = v[i - 1]
        if i == n - 1:
            if mode == MODE_FROZEN:
                return 0.0, 0
            right = v[n - 2]
        else:
            right = v[i + 1]
    s = v[i]
    col = i if per_site else 0
    if s < left and s < right:
        return up_tab[s - s_lo, col], 1
    if s > left and s > right:
        return down_tab[s - s_lo, col], -1
    return 0.0, 0


@numba.njit(cache=True, nogil=True)
def _set_leaf(tree, m, i, r):
    p = m + i
    tree[p] = r
    p >>= 1
    while p >= 1:
        tree[p] = tree[2 * p] + tree[2 * p + 1]
        p >>= 1


@numba.njit(cache=True, nogil=True)
def _run(v, mode, chi, down_tab, up_tab, s_lo, per_site, t, t_end, sample_times, k,
         snaps, record, ev_t, ev_x, ev_d, n_log, n_total, rng):
    n = v.size
    s_hi = s_lo + down_tab.shape[0] - 1
    m = 1
    while m < n:
        m *= 2
    tree = np.zeros(2 * m)
    dirs = np.zeros(n, np.int8)
    for i in range(n):
        r, d = _site_rate(v, i, n, mode, chi, down_tab, up_tab, s_lo, per_site)
        tree[m + i] = r
        dirs[i] = d
    for p in range(m - 1, 0, -1):
        tree[p] = tree[2 * p] + tree[2 * p + 1]
    n_samples = sample_times.size
    while True:
        if record and n_log >= ev_t.size:
            return STATUS_LOG, t, k, n_log, n_total
        total = tree[1]
        if total <= 0.0:
            while k < n_samples:
                snaps[k, :] = v
                k += 1
            return STATUS_DONE, t, k, n_log, n_total
        u = rng.random()
        while u == 0.0:
            u = rng.random()
        t_next = t - np.log(u) / total
        while k < n_samples and sample_times[k] < t_next:
            snaps[k, :] = v
            k += 1
        if t_next > t_end:
            return STATUS_DONE, t_end, k, n_log, n_total
        target = rng.random() * total
        p = 1
        while p < m:
            a = tree[2 * p]
            b = tree[2 * p + 1]
            if (target < a and a > 0.0) or b <= 0.0:
                p = 2 * p
            else:
                target -= a
                p = 2 * p + 1
        i = p - m
        d = dirs[i]
        v[i] += 2 * d
        t = t_next
        n_total += 1
        if record:
            ev_t[n_log] = t
            ev_x[n_log] = i
            ev_d[n_log] = d
            n_log += 1
        if v[i] < s_lo or v[i] > s_hi:
            return STATUS_TABLE, t, k, n_log, n_total
        for j in (i - 1, i, i + 1):
            if mode == MODE_RING:
                j = j % n
            elif j < 0 or j >= n:
                continue
            r, dj = _site_rate(v, j, n, mode, chi, down_tab, up_tab, s_lo, per_site)
            dirs[j] = dj
            _set_leaf(tree, m, j, r)


# ---------------------------------------------------------------- public API


def simulate(
    initial: HeightFunction,
    params: ModelParams,
    t_end: float,
    sample_times=None,
    rng: np.random.Generator | None = None,
    record_events: bool = True,
    seed: dict | None = None,
    table_margin: int = 64,
) -> Trajectory:
    """Run the exact dynamics on ``[0, t_end]`` and sample the state at ``sample_times``.

    Snapshots are right-continuous: an event at exactly a sample time would be
    included (this has probability zero).
    """
    if t_end < 0:
        raise ValueError("t_end must be nonnegative")
    sample_times = np.asarray([0.0, t_end] if sample_times is None else sample_times, dtype=float)
    if sample_times.size and (np.any(np.diff(sample_times) < 0) or sample_times[0] < 0 or sample_times[-1] > t_end):
        raise ValueError("sample_times must be sorted and inside [0, t_end]")
    if rng is None:
        rng = stream(0, 0)
        seed = seed or seed_record(0, 0)
    domain = initial.domain
    v = initial.values.copy()
    mode = _domain_mode(domain)
    chi = domain.winding if isinstance(domain, Ring) else 0
    per_site = _per_site_columns(params, domain)
    if domain.n_sites < 2:
        raise ValueError("need at least two sites")

    s_lo = int(v.min()) - table_margin
    s_hi = int(v.max()) + table_margin
    down_tab, up_tab = rate_tables(params, domain, s_lo, s_hi)

    snaps = np.empty((sample_times.size, v.size), dtype=np.int64)
    cap = 1024 if record_events else 0
    ev_t = np.empty(cap)
    ev_x = np.empty(cap, dtype=np.int64)
    ev_d = np.empty(cap, dtype=np.int8)
    t, k, n_log, n_total = 0.0, 0, 0, 0
    while True:
        status, t, k, n_log, n_total = _run(
            v, mode, chi, down_tab, up_tab, s_lo, per_site, t, float(t_end), sample_times, k,
            snaps, record_events, ev_t, ev_x, ev_d, n_log, n_total, rng,
        )
        if status == STATUS_DONE:
            break
        if status == STATUS_LOG:
            cap *= 2
            ev_t = np.resize(ev_t, cap)
            ev_x = np.resize(ev_x, cap)
            ev_d = np.resize(ev_d, cap)
        else:
            s_lo = min(s_lo, int(v.min()) - table_margin)
            s_hi = max(s_hi, int(v.max()) + table_margin)
            down_tab, up_tab = rate_tables(params, domain, s_lo, s_hi)
    return Trajectory(
        params=params,
        initial=initial.copy(),
        t_end=float(t_end),
        sample_times=sample_times,
        snapshots=snaps,
        n_events=int(n_total),
        seed=seed or {},
        event_times=ev_t[:n_log].copy() if record_events else None,
        event_sites=ev_x[:n_log].copy() if record_events else None,
        event_dirs=ev_d[:n_log].copy() if record_events else None,
    )


def site_rates(h: HeightFunction, params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """Per-site event rate and direction (+1 up, -1 down, 0 ineligible)."""
    dirs = eligibility(h)
    rates = np.zeros(h.domain.n_sites)
    for i, x in enumerate(h.sites):
        if dirs[i]:
            down, up = jump_rates(params, h, int(x))
            rates[i] = up if dirs[i] > 0 else down
    return rates, dirs


def total_rate(h: HeightFunction, params: ModelParams) -> float:
    return float(site_rates(h, params)[0].sum())


def step_event(h: HeightFunction, params: ModelParams, clock: float, rng) -> Event | None:
    """Sample and apply one transition in place; ``None`` when nothing can flip.

    Draws ``u`` for the waiting time ``-ln(u)/R`` and then ``v`` to pick the
    site whose cumulative rate first exceeds ``v R``.
    """
    rates, dirs = site_rates(h, params)
    total = rates.sum()
    if total <= 0:
        return FROZEN
    u = rng.random()
    while u == 0.0:
        u = rng.random()
    tau = -np.log(u) / total
    target = rng.random() * total
    cum = np.cumsum(rates)
    i = int(np.searchsorted(cum, target, side="right"))
    i = min(i, len(rates) - 1)
    while rates[i] == 0:
        i -= 1
    h.values[i] += 2 * int(dirs[i])
    return Event(clock + tau, int(h.sites[i]), Flip(int(dirs[i])))


@dataclass
class EnsembleSpec:
    """Inputs for a batch of independent trajectories."""

    params: ModelParams
    t_end: float
    sample_times: np.ndarray
    master_seed: int
    n: int
    initial: Callable[[np.random.Generator], HeightFunction] | HeightFunction
    record_events: bool = False
    start_index: int = 0
    keep: Optional[Callable[[Trajectory], object]] = field(default=None, repr=False)


def _one(spec: EnsembleSpec, idx: int):
    rng = stream(spec.master_seed, idx)
    init = spec.initial(rng) if callable(spec.initial) else spec.initial
    traj = simulate(init, spec.params, spec.t_end, spec.sample_times, rng,
                    spec.record_events, seed_record(spec.master_seed, idx))
    return spec.keep(traj) if spec.keep else traj


def simulate_ensemble(spec: EnsembleSpec, threads: int | None = None) -> list:
    """Trajectories (or ``spec.keep`` reductions) ordered by trajectory index.

    Trajectory ``i`` draws its initial state and its dynamics from stream
    ``(master_seed, start_index + i)``, so results do not depend on ``threads``.
    """
    idx = list(range(spec.start_index, spec.start_index + spec.n))
    threads = threads or os.cpu_count() or 1
    if threads == 1:
        return [_one(spec, i) for i in idx]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(lambda i: _one(spec, i), idx))


def rate_drift_decomposition(params: ModelParams, shat, x_frac=0.0):
    """``(rho_eps, lambda_eps)`` at rescaled tilted height ``shat``.

    The generalized rates see the site only through ``s - chi x / N``, which in
    rescaled variables is ``shat / sqrt(eps)``; ``x_frac`` is accepted for
    symmetry with the rescaled field and does not enter.
    """
    if not params.generalized:
        raise ValueError("rate_drift_decomposition needs a generalized rate function")
    del x_frac
    shat = np.asarray(shat, dtype=float)
    z = shat / np.sqrt(params.eps)
    down, up = rates_from_exponent(params.eps, params.rate_function.f(z))
    rho = (up + down) / 2
    lam = params.eps ** -1.5 * (up - down) / 2
    return rho, lam


def lemma_constants(params: ModelParams, shat) -> tuple[float, float]:
    """Smallest ``c0, c1`` with ``|rho - 1 + eps/2| <= c0 eps^2`` and
    ``|lambda + a shat / 4| <= c1 eps^(1-gamma) (1 + sqrt(eps)|shat|)^gamma`` on ``shat``."""
    rf = params.rate_function
    eps = params.eps
    rho, lam = rate_drift_decomposition(params, shat)
    c0 = np.max(np.abs(rho - 1 + eps / 2)) / eps**2
    scale = eps ** (1 - rf.gamma) * (1 + np.sqrt(eps) * np.abs(shat)) ** rf.gamma
    c1 = np.max(np.abs(lam + rf.slope * np.asarray(shat) / 4) / scale)
    return float(c0), float(c1)

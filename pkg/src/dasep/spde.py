"""Solvers for the additive stochastic heat equation ``dZ = (Delta Z + A Z) dT + B(T) dW``.

Two independent backends:

* periodic spectral: each real Fourier mode is an Ornstein-Uhlenbeck process
  advanced by its exact Gaussian transition (also for ``B(T) = b e^{cT}``);
* line finite differences: semi-implicit Euler-Maruyama on a Dirichlet window,
  ``(I - dt (Delta_dx + A)) u' = u + B(T + dt/2) sqrt(dt/dx) N``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded


class NonDissipative(ValueError):
    pass


@dataclass(frozen=True)
class ConstantB:
    b: float = 1.0

    def __call__(self, T):
        return self.b * np.ones_like(np.asarray(T, dtype=float))

    def sq_integral(self, t0: float, t1: float) -> float:
        return self.b**2 * (t1 - t0)


@dataclass(frozen=True)
class ExpB:
    """``B(T) = b e^{c T}``; ``ExpB(1, 1/4)`` is the transformed-height noise."""

    b: float = 1.0
    c: float = 0.25

    def __call__(self, T):
        return self.b * np.exp(self.c * np.asarray(T, dtype=float))

    def sq_integral(self, t0: float, t1: float) -> float:
        if self.c == 0:
            return self.b**2 * (t1 - t0)
        return self.b**2 * (np.exp(2 * self.c * t1) - np.exp(2 * self.c * t0)) / (2 * self.c)


BSpec = Union[ConstantB, ExpB]


@dataclass(frozen=True)
class Periodic:
    n_modes: int = 32
    length: float = 1.0
    n_grid: Optional[int] = None

    @property
    def grid_size(self) -> int:
        return self.n_grid or 2 * self.n_modes + 2

    def grid(self) -> np.ndarray:
        return np.arange(self.grid_size) * self.length / self.grid_size


@dataclass(frozen=True)
class Line:
    x_min: float = -4.0
    x_max: float = 4.0
    dx: float = 1 / 16

    def grid(self) -> np.ndarray:
        n = int(round((self.x_max - self.x_min) / self.dx))
        return self.x_min + self.dx * np.arange(n + 1)


@dataclass(frozen=True)
class SpdeConfig:
    A: float = 0.0
    B: BSpec = field(default_factory=ConstantB)
    domain: Union[Periodic, Line] = field(default_factory=Periodic)
    dt: float = 1e-3
    T_end: float = 1.0

    def __post_init__(self):
        if self.A > 0:
            raise ValueError("A must be <= 0")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if isinstance(self.domain, Line) and self.dt > self.domain.dx:
            raise ValueError("line solver needs dt <= dx")

    def sample_times(self) -> np.ndarray:
        n = int(round(self.T_end / self.dt))
        return self.dt * np.arange(n + 1)


@dataclass
class SpdeField:
    config: SpdeConfig
    times: np.ndarray
    grid: np.ndarray
    values: np.ndarray
    seed: dict = field(default_factory=dict)
    modes: Optional[np.ndarray] = None  # periodic backend: (times, coefficients)


def mode_stationary_variance(A: float, B: float, k: int, length: float = 1.0) -> float:
    lam = (2 * np.pi * k / length) ** 2 - A
    if lam <= 0:
        raise NonDissipative(f"mode {k} has nonpositive damping {lam}")
    return B**2 / (2 * lam)


# ---------------------------------------------------------------- periodic backend


class ModeBasis:
    """Real orthonormal Fourier basis on ``[0, L)``: ``1/sqrt(L)``, ``sqrt(2/L) cos``, ``sqrt(2/L) sin``.

    Coefficient order: ``[k=0, cos 1..K, sin 1..K]``.
    """

    def __init__(self, n_modes: int, length: float = 1.0):
        self.K = n_modes
        self.L = length
        self.k = np.concatenate([[0], np.arange(1, n_modes + 1), np.arange(1, n_modes + 1)])

    @property
    def size(self) -> int:
        return 2 * self.K + 1

    def wavenumbers(self) -> np.ndarray:
        return 2 * np.pi * self.k / self.L

    def damping(self, A: float) -> np.ndarray:
        return self.wavenumbers() ** 2 - A

    def synthesis(self, x) -> np.ndarray:
        """Matrix mapping coefficients to values at ``x``."""
        x = np.asarray(x, dtype=float)[:, None]
        w = 2 * np.pi * np.arange(1, self.K + 1)[None, :] / self.L
        c = np.sqrt(2 / self.L)
        return np.hstack([np.full((x.shape[0], 1), 1 / np.sqrt(self.L)), c * np.cos(w * x), c * np.sin(w * x)])

    def project(self, values, grid) -> np.ndarray:
        """Coefficients of a function sampled on a uniform periodic grid (exact for trig polynomials)."""
        h = self.L / len(grid)
        return h * self.synthesis(grid).T @ np.asarray(values, dtype=float)


def _ou_transition(lam: np.ndarray, dt: float, B: BSpec, t0: float):
    """Decay factors and innovation standard deviations for exact mode updates over ``[t0, t0+dt]``."""
    decay = np.exp(-lam * dt)
    if isinstance(B, ExpB):
        # int_{t0}^{t1} e^{-2 lam (t1 - r)} b^2 e^{2 c r} dr
        t1 = t0 + dt
        mu = lam + B.c
        with np.errstate(divide="ignore", invalid="ignore"):
            frac = np.where(mu != 0, -np.expm1(-2 * mu * dt) / (2 * np.where(mu != 0, mu, 1)), dt)
        var = B.b**2 * np.exp(2 * B.c * t1) * frac
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            frac = np.where(lam != 0, -np.expm1(-2 * lam * dt) / (2 * np.where(lam != 0, lam, 1)), dt)
        var = B.b**2 * frac
    return decay, np.sqrt(var)


def stationary_modes(cfg: SpdeConfig, rng: np.random.Generator) -> np.ndarray:
    """Coefficients drawn from the stationary law (constant ``B`` only)."""
    if not isinstance(cfg.B, ConstantB):
        raise ValueError("stationary modes need a constant noise coefficient")
    basis = ModeBasis(cfg.domain.n_modes, cfg.domain.length)
    lam = basis.damping(cfg.A)
    if np.any(lam <= 0):
        raise NonDissipative("zero mode is not damped; stationary law does not exist")
    return np.sqrt(cfg.B.b**2 / (2 * lam)) * rng.standard_normal(basis.size)


def solve_ou_periodic(
    cfg: SpdeConfig,
    Z0,
    rng: np.random.Generator,
    sample_times=None,
    points=None,
    seed: dict | None = None,
) -> SpdeField:
    """Exact-in-law mode evolution; values synthesized at ``points`` (default: the grid).

    ``Z0`` is either samples on the domain grid or a coefficient vector of
    length ``2 K + 1`` (flagged by passing a ``("modes", array)`` tuple).
    Between consecutive sample times each mode takes one exact OU step, so
    ``dt`` controls output resolution only.
    """
    dom = cfg.domain
    if not isinstance(dom, Periodic):
        raise ValueError("periodic solver needs a Periodic domain")
    basis = ModeBasis(dom.n_modes, dom.length)
    grid = dom.grid()
    if isinstance(Z0, tuple) and Z0[0] == "modes":
        a = np.asarray(Z0[1], dtype=float).copy()
    else:
        a = basis.project(Z0, grid)
    times = cfg.sample_times() if sample_times is None else np.asarray(sample_times, dtype=float)
    pts = grid if points is None else np.asarray(points, dtype=float)
    synth = basis.synthesis(pts)
    lam = basis.damping(cfg.A)
    starts = np.concatenate([[0.0], times[:-1]])
    steps = np.flatnonzero(times > starts)
    noise = rng.standard_normal((steps.size, basis.size))
    cache = {}
    modes = np.empty((times.size, basis.size))
    j = 0
    for i, ti in enumerate(times):
        if j < steps.size and steps[j] == i:
            t0 = starts[i]
            h = ti - t0
            key = round(h, 15)
            if key not in cache:
                cache[key] = _ou_transition(lam, h, cfg.B, 0.0)
            decay, sd = cache[key]
            if isinstance(cfg.B, ExpB):
                sd = sd * np.exp(cfg.B.c * t0)
            a = decay * a + sd * noise[j]
            j += 1
        modes[i] = a
    return SpdeField(cfg, times, pts, modes @ synth.T, seed or {}, modes)


# ---------------------------------------------------------------- line backend


class LineStepper:
    """Pre-factored semi-implicit step on a Dirichlet window."""

    def __init__(self, cfg: SpdeConfig):
        if not isinstance(cfg.domain, Line):
            raise ValueError("line solver needs a Line domain")
        self.cfg = cfg
        self.grid = cfg.domain.grid()
        n = self.grid.size
        dx, dt = cfg.domain.dx, cfg.dt
        r = dt / dx**2
        ab = np.zeros((2, n))
        ab[0, 1:] = -r
        ab[1, :] = 1 + 2 * r - dt * cfg.A
        self.chol = cholesky_banded(ab)
        self.noise_scale = np.sqrt(dt / dx)

    def step(self, u: np.ndarray, t: float, noise: np.ndarray) -> np.ndarray:
        b = float(self.cfg.B(t + self.cfg.dt / 2))
        return cho_solve_banded((self.chol, False), u + b * self.noise_scale * noise)


def solve_ou_line(cfg: SpdeConfig, Z0, rng: np.random.Generator, sample_every: int = 1, seed: dict | None = None) -> SpdeField:
    stepper = LineStepper(cfg)
    u = np.asarray(Z0, dtype=float).copy()
    if u.shape != stepper.grid.shape:
        raise ValueError("Z0 must be sampled on the line grid")
    n_steps = int(round(cfg.T_end / cfg.dt))
    times, vals = [0.0], [u.copy()]
    for n in range(n_steps):
        u = stepper.step(u, n * cfg.dt, rng.standard_normal(u.size))
        if (n + 1) % sample_every == 0 or n + 1 == n_steps:
            times.append((n + 1) * cfg.dt)
            vals.append(u.copy())
    return SpdeField(cfg, np.array(times), stepper.grid, np.array(vals), seed or {})


def solve_ou_line_final(cfg: SpdeConfig, Z0: np.ndarray, rngs: Sequence[np.random.Generator]) -> np.ndarray:
    """Final-time values for an ensemble; trajectory ``i`` uses only ``rngs[i]``.

    ``Z0`` is one shared initial profile or one row per trajectory.  Produces
    the same numbers as ``solve_ou_line`` run separately per stream.
    """
    stepper = LineStepper(cfg)
    n = stepper.grid.size
    Z0 = np.asarray(Z0, dtype=float)
    if Z0.ndim == 2:
        if Z0.shape != (len(rngs), n):
            raise ValueError("per-trajectory Z0 must have shape (len(rngs), grid size)")
        U = Z0.T.copy()
    else:
        U = np.repeat(Z0[:, None], len(rngs), axis=1)
    n_steps = int(round(cfg.T_end / cfg.dt))
    for s in range(n_steps):
        noise = np.column_stack([g.standard_normal(n) for g in rngs])
        b = float(cfg.B(s * cfg.dt + cfg.dt / 2))
        U = cho_solve_banded((stepper.chol, False), U + b * stepper.noise_scale * noise)
    return U.T


def heat_matrix_line(cfg: SpdeConfig) -> np.ndarray:
    """Deterministic part of the line scheme over the whole run (for mean checks)."""
    stepper = LineStepper(cfg)
    n = stepper.grid.size
    U = np.eye(n)
    for _ in range(int(round(cfg.T_end / cfg.dt))):
        U = cho_solve_banded((stepper.chol, False), U)
    return U


# ---------------------------------------------------------------- martingale problem


@dataclass
class MartingaleProblemPaths:
    times: np.ndarray
    m: np.ndarray
    n: np.ndarray
    compensator: np.ndarray


def compensator(c: float, T, norm_sq: float, b: float = 1.0):
    """``b^2 (e^{2cT} - 1) / (2c) ||phi||^2``, tending to ``b^2 T ||phi||^2`` as ``c -> 0``."""
    T = np.asarray(T, dtype=float)
    if c == 0:
        return b**2 * T * norm_sq
    return b**2 * np.expm1(2 * c * T) / (2 * c) * norm_sq


def _pairing(field: SpdeField, f_samples: np.ndarray) -> np.ndarray:
    dom = field.config.domain
    h = dom.length / field.grid.size if isinstance(dom, Periodic) else dom.dx
    return h * field.values @ f_samples


def _second_derivative(field: SpdeField, phi: np.ndarray) -> np.ndarray:
    dom = field.config.domain
    if isinstance(dom, Periodic):
        k = 2 * np.pi * np.fft.rfftfreq(phi.size, d=dom.length / phi.size)
        return np.fft.irfft(-(k**2) * np.fft.rfft(phi), n=phi.size)
    d2 = np.zeros_like(phi)
    d2[1:-1] = (phi[2:] - 2 * phi[1:-1] + phi[:-2]) / dom.dx**2
    return d2


def martingale_problem_residual(field: SpdeField, phi, A: float, c: float, diffusivity: float = 1.0, b: float = 1.0) -> MartingaleProblemPaths:
    """``M_T(phi) = Z_T(phi) - Z_0(phi) - int_0^T Z_r(D phi'' + A phi) dr`` and ``N = M^2 - compensator``.

    The time integral uses the trapezoid rule on the field's sample times.
    """
    phi = np.asarray(phi, dtype=float)
    d2 = _second_derivative(field, phi)
    zphi = _pairing(field, phi)
    drift_integrand = _pairing(field, diffusivity * d2 + A * phi)
    dt = np.diff(field.times)
    drift = np.concatenate([[0.0], np.cumsum(dt * (drift_integrand[1:] + drift_integrand[:-1]) / 2)])
    m = zphi - zphi[0] - drift
    dom = field.config.domain
    h = dom.length / field.grid.size if isinstance(dom, Periodic) else dom.dx
    norm_sq = float(h * np.sum(phi**2))
    comp = compensator(c, field.times, norm_sq, b)
    return MartingaleProblemPaths(field.times, m, m**2 - comp, comp)


def bump(grid, center: float = 0.5, radius: float = 0.3) -> np.ndarray:
    """Smooth compactly supported test function."""
    r = (np.asarray(grid, dtype=float) - center) / radius
    out = np.zeros_like(r)
    inside = np.abs(r) < 1
    out[inside] = np.exp(-1 / (1 - r[inside] ** 2))
    return out

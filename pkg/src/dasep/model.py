"""Model parameters and jump rates.

Rates are written in the form shared by the classic and generalized models:
with ``w = q**(-h)`` for an effective height ``h``,

    down = q (1 + w) / (1 + q w),     up = (1 + w) / (1 + w / q).

The classic model uses ``h = s(x) - log_q(alpha)``; the generalized ring model
uses ``h = f(s(x) - chi x / N)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .lattice import Domain, HeightFunction, Ring


@dataclass(frozen=True)
class RateFunction:
    """A generalized height-response ``f`` with its asymptotic constants.

    ``f`` must accept numpy arrays.  ``slope``, ``gamma`` and ``c`` are the
    constants in ``|f(z) - f(0) - slope z| <= c |z|**gamma``.
    """

    f: Callable[[np.ndarray], np.ndarray]
    slope: float = 1.0
    gamma: float = 0.0
    c: float = 0.0
    name: str = "custom"

    def check(self, z_max: float = 1e4, n: int = 20001) -> float:
        """Largest violation of the growth assumption on a symmetric grid (<= 0 means it holds)."""
        if not (self.slope >= 0 and 0 <= self.gamma < 0.5 and self.c >= 0):
            raise ValueError("need slope >= 0, gamma in [0, 1/2), c >= 0")
        z = np.concatenate([-np.geomspace(z_max, 1e-6, n // 2), [0.0], np.geomspace(1e-6, z_max, n // 2)])
        dev = np.abs(self.f(z) - self.f(np.zeros(1))[0] - self.slope * z)
        return float(np.max(dev - self.c * np.abs(z) ** self.gamma))


def identity_rate() -> RateFunction:
    return RateFunction(lambda z: np.asarray(z, dtype=float), 1.0, 0.0, 0.0, "identity")


def cosine_perturbed_rate(amplitude: float = 0.5) -> RateFunction:
    """``f(z) = z + amplitude cos(z)``; slope 1, gamma 0, c = 2 amplitude."""
    return RateFunction(
        lambda z: np.asarray(z, dtype=float) + amplitude * np.cos(z),
        1.0,
        0.0,
        2.0 * abs(amplitude),
        f"z+{amplitude}cos(z)",
    )


@dataclass(frozen=True)
class ModelParams:
    eps: float
    alpha: float = 1.0
    rate_function: Optional[RateFunction] = field(default=None, compare=False)

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.rate_function is not None and self.rate_function.check() > 1e-9:
            raise ValueError(f"rate function {self.rate_function.name} violates its growth bound")

    @property
    def q(self) -> float:
        return float(np.exp(-self.eps))

    @property
    def generalized(self) -> bool:
        return self.rate_function is not None

    @property
    def height_shift(self) -> float:
        """``log_q(alpha)``, the preferred height of the classic model."""
        return float(-np.log(self.alpha) / self.eps)

    @property
    def theta1(self) -> float:
        return float(np.expm1(-self.eps / 2) ** 2)

    @property
    def theta2(self) -> float:
        return float(2.0 * np.exp(-self.eps / 2))


def rates_from_exponent(eps: float, h) -> tuple[np.ndarray, np.ndarray]:
    """(down, up) rates for effective heights ``h``; stable for any magnitude of ``eps h``."""
    h = np.asarray(h, dtype=float)
    # logistic form: down = q + (1-q) sigma(eps (h-1)), up = q + (1-q) sigma(-eps (h+1))
    q = np.exp(-eps)
    one_minus_q = -np.expm1(-eps)
    down = q + one_minus_q * _sigmoid(eps * (h - 1.0))
    up = q + one_minus_q * _sigmoid(-eps * (h + 1.0))
    return down, up


def _sigmoid(a):
    a = np.asarray(a, dtype=float)
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def effective_height(params: ModelParams, s, x=None, domain: Domain | None = None):
    s = np.asarray(s, dtype=float)
    if not params.generalized:
        return s - params.height_shift
    chi_over_n = 0.0
    if isinstance(domain, Ring):
        chi_over_n = domain.winding / domain.period
    x = np.zeros_like(s) if x is None else np.asarray(x, dtype=float)
    return params.rate_function.f(s - chi_over_n * x)


def jump_rates(params: ModelParams, h: HeightFunction, x: int) -> tuple[float, float]:
    """(down_rate, up_rate) at site ``x``, regardless of flip eligibility."""
    s = h.at(x)
    xi = h.index(x)
    site = h.sites[xi]
    e = effective_height(params, np.array([s]), np.array([site]), h.domain)
    down, up = rates_from_exponent(params.eps, e)
    return float(down[0]), float(up[0])

"""Lattice domains and solid-on-solid height functions.

A height function assigns an integer ``s(x)`` to every site with
``|s(x+1) - s(x)| = 1``.  Two domains are supported: a ring of period ``N``
whose height gains ``chi`` per turn, and a finite window of the line whose
end sites are either frozen or reflected.
"""
from __future__ import annotations

import enum
import io
from dataclasses import dataclass, field
from typing import Union

import numpy as np


class LatticeError(ValueError):
    pass


class ParityViolation(LatticeError):
    pass


class SlopeViolation(LatticeError):
    pass


class WindingMismatch(LatticeError):
    pass


class OutOfDomain(LatticeError):
    pass


class Boundary(str, enum.Enum):
    FROZEN = "frozen"
    REFLECTING = "reflecting"


@dataclass(frozen=True)
class Ring:
    period: int
    winding: int = 0

    def __post_init__(self):
        if self.period < 2:
            raise LatticeError(f"ring period must be >= 2, got {self.period}")
        if (self.winding - self.period) % 2 != 0:
            raise ParityViolation(
                f"winding {self.winding} and period {self.period} must have equal parity"
            )
        if abs(self.winding) > self.period:
            raise WindingMismatch(f"|winding| = {abs(self.winding)} exceeds period {self.period}")

    @property
    def n_sites(self) -> int:
        return self.period

    @property
    def sites(self) -> np.ndarray:
        return np.arange(self.period)

    def describe(self) -> str:
        return f"ring period={self.period} winding={self.winding}"


@dataclass(frozen=True)
class LineWindow:
    x_min: int
    x_max: int
    boundary: Boundary = Boundary.FROZEN

    def __post_init__(self):
        if not self.x_min < self.x_max:
            raise LatticeError(f"need x_min < x_max, got {self.x_min}, {self.x_max}")
        object.__setattr__(self, "boundary", Boundary(self.boundary))

    @property
    def n_sites(self) -> int:
        return self.x_max - self.x_min + 1

    @property
    def sites(self) -> np.ndarray:
        return np.arange(self.x_min, self.x_max + 1)

    def describe(self) -> str:
        return f"line x_min={self.x_min} x_max={self.x_max} boundary={self.boundary.value}"


Domain = Union[Ring, LineWindow]


class Flip(enum.IntEnum):
    DOWN = -1
    UP = 1


@dataclass
class HeightFunction:
    """Heights over one period (ring) or over every window site (line)."""

    domain: Domain
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.int64)
        if self.values.shape != (self.domain.n_sites,):
            raise LatticeError(
                f"expected {self.domain.n_sites} heights, got shape {self.values.shape}"
            )
        validate(self.domain, self.values)

    def __eq__(self, other):
        if not isinstance(other, HeightFunction):
            return NotImplemented
        return self.domain == other.domain and np.array_equal(self.values, other.values)

    @property
    def sites(self) -> np.ndarray:
        return self.domain.sites

    def index(self, x: int) -> int:
        """Array index of site ``x``; ring sites wrap, window sites must lie inside."""
        d = self.domain
        if isinstance(d, Ring):
            return int(x) % d.period
        if not d.x_min <= x <= d.x_max:
            raise OutOfDomain(f"site {x} outside window [{d.x_min}, {d.x_max}]")
        return int(x) - d.x_min

    def at(self, x: int) -> int:
        """Height at any integer site, using the winding extension on the ring."""
        d = self.domain
        if isinstance(d, Ring):
            m, r = divmod(int(x), d.period)
            return int(self.values[r]) + d.winding * m
        return int(self.values[self.index(x)])

    def copy(self) -> "HeightFunction":
        return HeightFunction(self.domain, self.values.copy())


def validate(domain: Domain, values: np.ndarray) -> None:
    v = np.asarray(values, dtype=np.int64)
    steps = np.diff(v)
    bad = np.flatnonzero(np.abs(steps) != 1)
    if bad.size:
        i = int(bad[0])
        raise SlopeViolation(f"increment {int(steps[i])} between array positions {i} and {i + 1}")
    if isinstance(domain, Ring):
        closing = int(v[0]) + domain.winding - int(v[-1])
        if abs(closing) != 1:
            raise WindingMismatch(
                f"profile does not close with winding {domain.winding} (closing step {closing})"
            )


def neighbour_values(domain: Domain, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Heights at ``x-1`` and ``x+1`` for every site.

    Frozen window ends get their own height as a ghost, which makes them
    ineligible for any flip.  Reflecting ends mirror the inner neighbour.
    """
    v = np.asarray(values, dtype=np.int64)
    left = np.empty_like(v)
    right = np.empty_like(v)
    left[1:] = v[:-1]
    right[:-1] = v[1:]
    if isinstance(domain, Ring):
        left[0] = v[-1] - domain.winding
        right[-1] = v[0] + domain.winding
    elif domain.boundary is Boundary.REFLECTING:
        left[0] = v[1]
        right[-1] = v[-2]
    else:
        left[0] = v[0]
        right[-1] = v[-1]
    return left, right


def eligibility(h: HeightFunction) -> np.ndarray:
    """+1 where an up-flip is allowed (strict local min), -1 for down (strict max), else 0."""
    left, right = neighbour_values(h.domain, h.values)
    s = h.values
    out = np.zeros_like(s)
    out[(s < left) & (s < right)] = 1
    out[(s > left) & (s > right)] = -1
    return out


def flip_eligibility(h: HeightFunction, x: int) -> Flip | None:
    i = h.index(x)
    e = int(eligibility(h)[i])
    return Flip(e) if e else None


def indicator_products(grad_minus, grad_plus):
    """Local-min and local-max indicators written as slope polynomials.

    With ``grad_minus = s(x) - s(x-1)`` and ``grad_plus = s(x+1) - s(x)``, a
    strict local minimum is ``(1 - grad_minus)(1 + grad_plus)/4`` and a strict
    local maximum is ``(1 + grad_minus)(1 - grad_plus)/4``.
    """
    gm = np.asarray(grad_minus)
    gp = np.asarray(grad_plus)
    return (1 - gm) * (1 + gp) / 4, (1 + gm) * (1 - gp) / 4


def _balanced_steps(n_up: int, n_down: int) -> np.ndarray:
    # spread n_up (+1) steps as evenly as possible among n_up + n_down slots
    n = n_up + n_down
    k = np.arange(1, n + 1)
    ups = -((-k * n_up) // n) + (((1 - k) * n_up) // n)
    return np.where(ups == 1, 1, -1)


def new_height(domain: Domain, profile="flat") -> HeightFunction:
    """Build an initial height function.

    ``profile`` is one of ``"wedge"`` (``s(x) = |x|``), ``"flat"`` (alternating
    0/1, tilted evenly to the ring winding), ``"max_slope"`` (``s(x) = x``) or an
    explicit integer array.
    """
    if not isinstance(profile, str):
        return HeightFunction(domain, np.asarray(profile, dtype=np.int64))
    x = domain.sites
    if profile == "wedge":
        if isinstance(domain, Ring):
            if domain.winding != 0:
                raise WindingMismatch("wedge profile on a ring needs winding 0")
            values = np.minimum(x, domain.period - x)
        else:
            values = np.abs(x)
    elif profile == "flat":
        if isinstance(domain, Ring):
            n_up = (domain.period + domain.winding) // 2
            steps = _balanced_steps(n_up, domain.period - n_up)
            values = np.concatenate([[0], np.cumsum(steps[:-1])])
        else:
            values = x % 2
    elif profile == "max_slope":
        if isinstance(domain, Ring) and abs(domain.winding) != domain.period:
            raise WindingMismatch("max_slope profile needs |winding| = period")
        sign = -1 if isinstance(domain, Ring) and domain.winding < 0 else 1
        values = sign * (x - x[0])
    else:
        raise ValueError(f"unknown profile {profile!r}")
    return HeightFunction(domain, values)


def domain_from_description(text: str) -> Domain:
    kind, *pairs = text.split()
    kv = dict(p.split("=", 1) for p in pairs)
    if kind == "ring":
        return Ring(int(kv["period"]), int(kv["winding"]))
    if kind == "line":
        return LineWindow(int(kv["x_min"]), int(kv["x_max"]), Boundary(kv["boundary"]))
    raise ValueError(f"unknown domain kind {kind!r}")


def to_csv(h: HeightFunction) -> str:
    buf = io.StringIO()
    buf.write(f"# {h.domain.describe()}\n")
    buf.write("site,value\n")
    for x, v in zip(h.sites, h.values):
        buf.write(f"{int(x)},{int(v)}\n")
    return buf.getvalue()


def from_csv(text: str) -> HeightFunction:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ValueError("missing domain header line")
    domain = domain_from_description(lines[0][1:].strip())
    rows = [ln.split(",") for ln in lines[2:] if ln.strip()]
    values = np.array([int(v) for _, v in rows], dtype=np.int64)
    sites = np.array([int(x) for x, _ in rows])
    if not np.array_equal(sites, domain.sites):
        raise ValueError("site column does not match the domain")
    return HeightFunction(domain, values)

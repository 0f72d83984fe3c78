import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dasep.lattice import (
    Flip,
    HeightFunction,
    LineWindow,
    OutOfDomain,
    ParityViolation,
    Ring,
    SlopeViolation,
    WindingMismatch,
    eligibility,
    flip_eligibility,
    from_csv,
    indicator_products,
    new_height,
    to_csv,
)


def test_flat_ring_of_four():
    assert new_height(Ring(4, 0), "flat").values.tolist() == [0, 1, 0, 1]


def test_ring_parity_rejected():
    with pytest.raises(ParityViolation):
        Ring(3, 0)


def test_wedge_on_window():
    assert new_height(LineWindow(-2, 2), "wedge").values.tolist() == [2, 1, 0, 1, 2]


def test_bad_slope_rejected():
    with pytest.raises(SlopeViolation):
        HeightFunction(LineWindow(0, 2), [0, 2, 1])


def test_winding_mismatch_rejected():
    with pytest.raises(WindingMismatch):
        HeightFunction(Ring(4, 2), [0, 1, 0, -1])
    with pytest.raises(WindingMismatch):
        new_height(Ring(4, 2), "wedge")


@pytest.mark.parametrize("nbhd,expected", [((1, 0, 1), Flip.UP), ((0, 1, 0), Flip.DOWN), ((0, 1, 2), None)])
def test_eligibility_examples(nbhd, expected):
    h = HeightFunction(LineWindow(-1, 1), list(nbhd))
    assert flip_eligibility(h, 0) == expected


def test_frozen_boundary_and_outside():
    h = new_height(LineWindow(-2, 2), "wedge")
    assert flip_eligibility(h, -2) is None and flip_eligibility(h, 2) is None
    with pytest.raises(OutOfDomain):
        flip_eligibility(h, 3)


def test_ring_wraps_with_winding():
    # s(-1) = s(3) - chi = 1 - 2 on a ring of period 4 with winding 2
    h = HeightFunction(Ring(4, 2), [0, 1, 2, 1])
    assert h.at(-1) == -1 and h.at(4) == 2
    assert flip_eligibility(h, 0) is None
    assert flip_eligibility(h, 2) == Flip.DOWN


@given(st.integers(1, 40))
def test_max_slope_ring_is_frozen(n):
    for chi in (n, -n):
        assert not np.any(eligibility(new_height(Ring(n + (n < 2), chi if n >= 2 else 2 * np.sign(chi)), "max_slope")))


@pytest.mark.parametrize("gm", [-1, 1])
@pytest.mark.parametrize("gp", [-1, 1])
def test_indicator_products_exhaustive(gm, gp):
    h = HeightFunction(LineWindow(-1, 1), [0, gm, gm + gp])
    e = flip_eligibility(h, 0)
    lo, hi = indicator_products(gm, gp)
    assert lo == (e == Flip.UP)
    assert hi == (e == Flip.DOWN)


@st.composite
def heights(draw):
    if draw(st.booleans()):
        n = draw(st.integers(2, 30))
        chi = draw(st.integers(-n, n).filter(lambda c: (c - n) % 2 == 0))
        up = (n + chi) // 2
        steps = np.array([1] * up + [-1] * (n - up))
        steps = steps[np.array(draw(st.permutations(range(n))))]
        base = draw(st.integers(-5, 5))
        return HeightFunction(Ring(n, chi), base + np.concatenate([[0], np.cumsum(steps[:-1])]))
    n = draw(st.integers(2, 30))
    x0 = draw(st.integers(-20, 20))
    steps = draw(st.lists(st.sampled_from([-1, 1]), min_size=n - 1, max_size=n - 1))
    base = draw(st.integers(-5, 5)) * 2 + (x0 % 2)
    return HeightFunction(LineWindow(x0, x0 + n - 1), base + np.concatenate([[0], np.cumsum(steps)]))


@given(heights())
def test_csv_round_trip(h):
    assert from_csv(to_csv(h)) == h


@given(heights())
def test_flipping_eligible_site_keeps_invariants(h):
    e = eligibility(h)
    for i in np.flatnonzero(e):
        v = h.values.copy()
        v[i] += 2 * e[i]
        HeightFunction(h.domain, v)  # validates slope and winding


@given(heights())
def test_eligibility_matches_local_extrema(h):
    e = eligibility(h)
    for i, x in enumerate(h.sites):
        if isinstance(h.domain, LineWindow) and (i == 0 or i == len(h.sites) - 1):
            assert e[i] == 0
            continue
        left, mid, right = h.at(x - 1), h.at(x), h.at(x + 1)
        assert (e[i] == 1) == (mid < left and mid < right)
        assert (e[i] == -1) == (mid > left and mid > right)

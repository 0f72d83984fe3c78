import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dasep.lattice import HeightFunction, LineWindow, Ring, eligibility, new_height
from dasep.model import ModelParams, RateFunction, cosine_perturbed_rate, identity_rate, jump_rates
from dasep.rng import stream
from dasep.sim import (
    EnsembleSpec,
    Event,
    lemma_constants,
    rate_drift_decomposition,
    simulate,
    simulate_ensemble,
    site_rates,
    step_event,
    total_rate,
)


class StubRng:
    def __init__(self, values):
        self.values = list(values)

    def random(self):
        return self.values.pop(0)


def test_rates_equal_at_preferred_height():
    p = ModelParams(np.log(2.0))
    h = new_height(LineWindow(-1, 1), [1, 0, 1])
    down, up = jump_rates(p, h, 0)
    assert down == pytest.approx(2 / 3, rel=1e-14)
    assert up == pytest.approx(2 / 3, rel=1e-14)


def test_small_alpha_limit():
    p = ModelParams(0.7, 1e-12)
    h = new_height(LineWindow(-1, 1), [1, 0, 1])
    down, up = jump_rates(p, h, 0)
    assert down == pytest.approx(p.q, rel=1e-9)
    assert up == pytest.approx(1.0, rel=1e-9)


def test_rates_against_direct_formula():
    # down = q(1 + alpha q^-s)/(1 + alpha q^{1-s}), up = (1 + alpha q^-s)/(1 + alpha q^{-s-1})
    for eps, alpha in [(0.3, 1.0), (0.1, 2.5), (1.0, 0.2)]:
        p = ModelParams(eps, alpha)
        q = p.q
        for s in range(-6, 7, 2):
            h = new_height(LineWindow(-1, 1), [s + 1, s, s + 1])
            down, up = jump_rates(p, h, 0)
            w = alpha * q**-s
            assert down == pytest.approx(q * (1 + w) / (1 + q * w), rel=1e-13)
            assert up == pytest.approx(q * (1 + w) / (q + w), rel=1e-13)


def test_identity_rate_reduces_to_classic():
    dom = Ring(8, 0)
    pc = ModelParams(0.2)
    pg = ModelParams(0.2, rate_function=identity_rate())
    for s in range(-10, 11, 2):
        h = HeightFunction(dom, s + new_height(dom, "flat").values)
        for x in range(8):
            assert jump_rates(pc, h, x) == pytest.approx(jump_rates(pg, h, x), rel=1e-14)


def test_max_slope_ring_frozen():
    h = new_height(Ring(6, 6), "max_slope")
    assert step_event(h.copy(), ModelParams(0.1), 0.0, stream(0)) is None
    tr = simulate(h, ModelParams(0.1), 5.0, [0.0, 2.0, 5.0], stream(0))
    assert tr.n_events == 0
    assert all(np.array_equal(s, h.values) for s in tr.snapshots)


def test_single_site_inverse_cdf():
    p = ModelParams(0.4)
    h = new_height(LineWindow(-1, 1), [1, 0, 1])
    rates, _ = site_rates(h, p)
    r = rates[1]
    u = 0.3
    ev = step_event(h, p, 1.0, StubRng([u, 0.5]))
    assert ev == Event(pytest.approx(1.0 - np.log(u) / r), 0, ev.direction)
    assert h.values.tolist() == [1, 2, 1]


def test_total_rate_is_sum_over_eligible_sites():
    p = ModelParams(0.15, 1.7)
    h = new_height(LineWindow(-10, 10), "flat")
    e = eligibility(h)
    expect = 0.0
    for i, x in enumerate(h.sites):
        if e[i]:
            down, up = jump_rates(p, h, int(x))
            expect += up if e[i] > 0 else down
    assert total_rate(h, p) == pytest.approx(expect, rel=1e-14)


def test_zero_horizon():
    h = new_height(LineWindow(-5, 5), "wedge")
    tr = simulate(h, ModelParams(0.1), 0.0, [0.0], stream(1))
    assert tr.n_events == 0 and np.array_equal(tr.snapshots[0], h.values)


def test_kernel_matches_reference_stepper():
    # the compiled loop and the plain stepper consume the stream identically
    p = ModelParams(0.1)
    h = new_height(LineWindow(-20, 20), "wedge")
    tr = simulate(h, p, 30.0, [0.0, 30.0], stream(1, 0))
    g = stream(1, 0)
    hh = h.copy()
    t = 0.0
    ref = []
    while True:
        e = step_event(hh, p, t, g)
        if e is None or e.time > 30.0:
            if e is not None:
                hh.values[hh.index(e.site)] -= 2 * int(e.direction)
            break
        ref.append(e)
        t = e.time
    got = tr.events()
    assert len(got) == len(ref)
    assert all(a.site == b.site and a.direction == b.direction for a, b in zip(got, ref))
    assert max(abs(a.time - b.time) for a, b in zip(got, ref)) < 1e-9
    assert np.array_equal(hh.values, tr.snapshots[-1])


def test_generalized_ring_matches_reference_stepper():
    p = ModelParams(1 / 16, rate_function=cosine_perturbed_rate())
    h = new_height(Ring(16, 4), "flat")
    tr = simulate(h, p, 20.0, [20.0], stream(4, 2))
    g = stream(4, 2)
    hh = h.copy()
    t = 0.0
    n = 0
    while True:
        e = step_event(hh, p, t, g)
        if e is None or e.time > 20.0:
            if e is not None:
                hh.values[hh.index(e.site)] -= 2 * int(e.direction)
            break
        n += 1
        t = e.time
    assert n == tr.n_events and np.array_equal(hh.values, tr.snapshots[0])


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1))
def test_snapshots_valid_and_replayable(seed):
    p = ModelParams(0.2, rate_function=cosine_perturbed_rate())
    dom = Ring(12, 2)
    tr = simulate(new_height(dom, "flat"), p, 15.0, np.linspace(0, 15, 4), stream(seed))
    for k in range(len(tr.sample_times)):
        tr.snapshot(k)  # validates slope and winding
    assert np.array_equal(tr.replay(), tr.snapshots)
    assert np.all(np.diff(tr.event_times) > 0)


def test_exact_rerun():
    h = new_height(LineWindow(-30, 30), "flat")
    a = simulate(h, ModelParams(0.1, 0.5), 20.0, [5.0, 20.0], stream(9, 3))
    b = simulate(h, ModelParams(0.1, 0.5), 20.0, [5.0, 20.0], stream(9, 3))
    assert np.array_equal(a.snapshots, b.snapshots)
    assert np.array_equal(a.event_times, b.event_times)


def test_table_growth_resume():
    # a tiny margin forces several rate-table rebuilds mid-run
    h = new_height(LineWindow(-30, 30), "wedge")
    a = simulate(h, ModelParams(0.05), 40.0, [40.0], stream(2), table_margin=1)
    b = simulate(h, ModelParams(0.05), 40.0, [40.0], stream(2), table_margin=200)
    assert np.array_equal(a.snapshots, b.snapshots)


def test_event_count_bound_on_ring():
    n, t = 32, 50.0
    counts = [simulate(new_height(Ring(n, 0), "flat"), ModelParams(0.1), t, [t], stream(5, i), False).n_events
              for i in range(20)]
    mean = np.mean(counts)
    assert mean <= 2 * n * t + 5 * np.sqrt(2 * n * t / len(counts))


def test_height_shift_reduction():
    # log_q alpha = 4 is an even integer, so shifting the data by 4 keeps parity
    eps = 0.1
    p1 = ModelParams(eps, float(np.exp(-4 * eps)))
    p0 = ModelParams(eps, 1.0)
    h = new_height(LineWindow(-20, 20), "wedge")
    a = simulate(h, p1, 30.0, [10.0, 30.0], stream(3))
    b = simulate(HeightFunction(h.domain, h.values - 4), p0, 30.0, [10.0, 30.0], stream(3))
    assert np.array_equal(a.snapshots - 4, b.snapshots)
    assert np.allclose(a.event_times, b.event_times, rtol=1e-10)


def test_ensemble_independent_of_threads():
    spec = EnsembleSpec(ModelParams(0.1), 10.0, np.array([10.0]), 4, 6, new_height(LineWindow(-10, 10), "flat"))
    a = simulate_ensemble(spec, threads=1)
    b = simulate_ensemble(spec, threads=3)
    assert all(np.array_equal(x.snapshots, y.snapshots) for x, y in zip(a, b))
    assert [x.seed["index"] for x in a] == list(range(6))


def test_drift_vanishes_for_zero_response():
    zero = RateFunction(lambda z: np.zeros_like(np.asarray(z, dtype=float)), 0.0, 0.0, 0.0, "zero")
    for eps in (0.1, 0.05, 0.01):
        _, lam = rate_drift_decomposition(ModelParams(eps, rate_function=zero), np.linspace(-5, 5, 11))
        assert np.all(np.abs(lam) < 1e-12)


def test_drift_decomposition_against_direct_rates():
    # the generalized rates use exponent f(s) in place of s - log_q alpha
    eps = 0.05
    p = ModelParams(eps, rate_function=identity_rate())
    shat = np.array([-2.0, 0.3, 4.0])
    rho, lam = rate_drift_decomposition(p, shat)
    q = np.exp(-eps)
    w = q ** -(shat / np.sqrt(eps))
    down = q * (1 + w) / (1 + q * w)
    up = q * (1 + w) / (q + w)
    assert np.allclose(rho, (up + down) / 2, rtol=1e-12)
    assert np.allclose(lam, eps**-1.5 * (up - down) / 2, rtol=1e-9)


def test_lemma_constants_finite():
    shat = np.linspace(-5, 5, 401)
    for rf in (identity_rate(), cosine_perturbed_rate()):
        c = [lemma_constants(ModelParams(e, rate_function=rf), shat) for e in (0.1, 0.05, 0.01)]
        assert np.all(np.isfinite(c))

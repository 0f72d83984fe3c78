import itertools
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from dasep.hopf_cole import transform_values
from dasep.lattice import LineWindow, Ring, new_height
from dasep.model import ModelParams
from dasep.rng import stream
from dasep.sim import simulate
from dasep.stats import (
    FieldEnsemble,
    GridMismatch,
    InsufficientSamples,
    dequantize,
    dequantized_cdf,
    ensemble_compare,
    holder_exponent,
    ks_pvalue,
    ks_statistic,
    ks_test,
    moments,
    population_ks_to_normal,
    regularity_report,
    rescale_height,
    rescale_hopf_cole,
    unscale_height,
)


def _frozen(h, eps, alpha=1.0):
    return simulate(h, ModelParams(eps, alpha), 0.0, [0.0], stream(0), record_events=False)


def test_wedge_rescales_to_abs():
    eps = 0.01
    tr = _frozen(new_height(LineWindow(-300, 300), "wedge"), eps)
    X = np.array([-2.0, -0.5, 0.0, 0.37, 1.0, 2.5])
    got = rescale_height(tr, eps, [0.0], X)[0]
    # sqrt(eps) |X / eps| is |X| / sqrt(eps), not |X|
    np.testing.assert_allclose(got, np.abs(X) / np.sqrt(eps), rtol=1e-14)
    np.testing.assert_allclose(np.sqrt(eps) * got, np.abs(X), rtol=1e-14)


def test_alpha_one_has_no_recentring():
    eps = 0.1
    h = new_height(LineWindow(-20, 20), "flat")
    a = rescale_height(_frozen(h, eps, 1.0), eps, [0.0], [0.0, 1.0])
    np.testing.assert_array_equal(a, np.sqrt(eps) * np.array([[0.0, 0.0]]))
    b = rescale_height(_frozen(h, eps, 2.0), eps, [0.0], [0.0, 1.0])
    np.testing.assert_allclose(b - a, np.sqrt(eps) * np.log(2.0) / eps, rtol=1e-14)


@pytest.mark.parametrize("chi", [0, 4, -6])
def test_ring_periodicity(chi):
    n = 16
    eps = 1 / n
    h = new_height(Ring(n, chi), "flat")
    tr = _frozen(h, eps)
    X = np.linspace(0, 1, 9)[:-1]
    a = rescale_height(tr, eps, [0.0], X)
    b = rescale_height(tr, eps, [0.0], X + 1)
    c = rescale_height(tr, eps, [0.0], X - 2)
    np.testing.assert_allclose(a, b, atol=1e-13)
    np.testing.assert_allclose(a, c, atol=1e-13)


def test_ring_needs_matching_eps():
    tr = _frozen(new_height(Ring(16, 0), "flat"), 0.1)
    with pytest.raises(GridMismatch):
        rescale_height(tr, 0.1, [0.0], [0.0])


def test_missing_time_is_grid_mismatch():
    tr = _frozen(new_height(LineWindow(-4, 4), "flat"), 0.1)
    with pytest.raises(GridMismatch):
        rescale_height(tr, 0.1, [0.5], [0.0])


@settings(max_examples=30)
@given(seed=st.integers(0, 10**6), alpha=st.floats(0.2, 5.0))
def test_unscale_recovers_integer_heights(seed, alpha):
    eps = 0.1
    p = ModelParams(eps, alpha)
    h = new_height(LineWindow(-30, 30), "flat")
    tr = simulate(h, p, 10.0, [0.0, 10.0], stream(seed), record_events=False)
    X = np.arange(-2.0, 2.01, 0.1)
    vals = rescale_height(tr, eps, [0.1], X)
    back = unscale_height(vals, eps, X, offset=-np.log(alpha) / eps)
    np.testing.assert_allclose(back[0], tr.snapshots[1][(X / eps).round().astype(int) + 30], atol=1e-9)


def test_unscale_ring():
    n, chi = 32, 6
    eps = 1 / n
    tr = simulate(new_height(Ring(n, chi), "flat"), ModelParams(eps), 20.0, [0.0, 20.0], stream(1), record_events=False)
    T = 20.0 * eps**2
    X = np.arange(n) / n
    vals = rescale_height(tr, eps, [T], X)
    np.testing.assert_allclose(unscale_height(vals, eps, X, shift_per_X=chi)[0], tr.snapshots[1], atol=1e-9)


def test_zero_slice_has_zero_transform():
    eps = 0.1
    tr = _frozen(new_height(LineWindow(-20, 20), "flat"), eps)
    X = np.array([-1.0, -0.4, 0.0, 0.6, 1.2])  # even sites, where flat heights are 0
    r = rescale_hopf_cole(tr, eps, [0.0], X)
    np.testing.assert_array_equal(r.values, 0.0)
    assert r.taylor_gap <= 1e-14


@given(eps=st.floats(0.001, 1.0), s=st.integers(-400, 400))
def test_transform_bounded_by_exponential_of_height(eps, s):
    z = float(transform_values(ModelParams(eps), s)) / np.sqrt(eps)
    shat = np.sqrt(eps) * s
    assert abs(z) <= abs(shat) * np.exp(np.sqrt(eps) * abs(shat)) * (1 + 1e-12)


def test_hopf_cole_on_trajectory():
    eps = 0.1
    p = ModelParams(eps)
    tr = simulate(new_height(LineWindow(-40, 40), "flat"), p, 50.0, [0.0, 50.0], stream(2), record_events=False)
    X = np.arange(-3.0, 3.01, 0.5)
    r = rescale_hopf_cole(tr, eps, [0.5], X)
    s = tr.snapshots[1][(X / eps).round().astype(int) + 40]
    np.testing.assert_allclose(r.values[0], transform_values(p, s, 50.0) / np.sqrt(eps), rtol=1e-14)
    with pytest.raises(GridMismatch):
        rescale_hopf_cole(tr, eps, [0.5], [0.05])


# ---------------------------------------------------------------- KS


def _ks_oracle_pvalue(n, m, d):
    """Enumerate every assignment of the pooled ranks to the first sample."""
    hits = 0
    total = 0
    for pos in itertools.combinations(range(n + m), n):
        a = np.array(pos, dtype=float)
        b = np.array([i for i in range(n + m) if i not in pos], dtype=float)
        total += 1
        if ks_statistic(a, b) >= d - 1e-12:
            hits += 1
    assert total == comb(n + m, n)
    return hits / total


@pytest.mark.parametrize("n,m", [(1, 1), (2, 3), (3, 3), (4, 5), (5, 5), (2, 5)])
def test_exact_pvalue_matches_enumeration(n, m):
    ds = sorted({abs(i / n - j / m) for i in range(n + 1) for j in range(m + 1)} - {0.0})
    for d in ds:
        assert ks_pvalue(d, n, m) == pytest.approx(_ks_oracle_pvalue(n, m, d), abs=1e-12)


@settings(max_examples=50)
@given(seed=st.integers(0, 10**6), n=st.integers(5, 60), m=st.integers(5, 60))
def test_ks_matches_scipy(seed, n, m):
    g = np.random.default_rng(seed)
    a, b = g.normal(size=n), g.normal(0.3, 1.2, size=m)
    ref = sps.ks_2samp(a, b, method="exact")
    d, p = ks_test(a, b)
    assert d == pytest.approx(ref.statistic, abs=1e-14)
    assert p == pytest.approx(ref.pvalue, rel=1e-6, abs=1e-10)


def test_identical_samples():
    x = np.random.default_rng(0).normal(size=500)
    d, p = ks_test(x, x)
    assert d == 0.0 and p == 1.0


def test_ks_power():
    g = np.random.default_rng(1)
    _, p = ks_test(g.normal(size=10000), g.normal(0.5, size=10000))
    assert p < 1e-6


def test_ks_pvalues_calibrated():
    g = np.random.default_rng(2)
    ps = [ks_test(g.normal(size=10000), g.normal(size=10000))[1] for _ in range(200)]
    assert sps.kstest(ps, "uniform").pvalue > 0.01


def _ensemble(g, n, loc=0.0):
    return FieldEnsemble({}, np.array([0.0, 1.0]), np.array([-1.0, 0.0, 1.0]), g.normal(loc, 1.0, (n, 2, 3)))


def test_compare_needs_samples():
    g = np.random.default_rng(3)
    with pytest.raises(InsufficientSamples):
        ensemble_compare(_ensemble(g, 49), _ensemble(g, 500))


def test_compare_self_and_shift():
    g = np.random.default_rng(4)
    a = _ensemble(g, 2000)
    same = ensemble_compare(a, a)
    assert np.all(same.ks == 0) and np.all(same.passed)
    shifted = ensemble_compare(a, _ensemble(g, 2000, 0.5))
    assert not np.any(shifted.passed)
    assert len(same.to_json()["points"]) == 6


def test_shape_checked():
    with pytest.raises(GridMismatch):
        FieldEnsemble({}, np.array([0.0]), np.array([0.0, 1.0]), np.zeros((10, 2, 2)))


@settings(max_examples=30)
@given(seed=st.integers(0, 10**6), n=st.integers(50, 200))
def test_covariance_psd(seed, n):
    g = np.random.default_rng(seed)
    base = g.normal(size=(n, 2, 3))
    base[:, 1] = base[:, 0] + 1e-3 * base[:, 1]  # nearly collinear columns
    r = ensemble_compare(FieldEnsemble({}, np.array([0.0, 1.0]), np.arange(3.0), base),
                         FieldEnsemble({}, np.array([0.0, 1.0]), np.arange(3.0), g.normal(size=(n, 2, 3))))
    for c in (r.cov_a, r.cov_b):
        np.testing.assert_allclose(c, c.T, atol=1e-14)
        assert np.linalg.eigvalsh(c).min() >= -1e-10 * np.abs(c).max()


def test_moments_of_normal():
    x = np.random.default_rng(5).normal(2.0, 3.0, 20000)
    m = moments(x)
    assert abs(m.mean - 2.0) <= 4 * m.mean_se
    assert abs(m.var - 9.0) <= 4 * m.var_se
    assert abs(m.skew) <= 4 * m.skew_se
    assert abs(m.kurt) <= 4 * m.kurt_se


# ---------------------------------------------------------------- regularity


def test_constant_field_regularity():
    r = regularity_report(np.full((20, 50), 3.0), 0.1, u=0.1, C0=100.0)
    assert np.all(r.increment_norms == 0)
    assert r.space_ratio == 0
    assert r.violations == []


def test_brownian_holder_exponent():
    g = np.random.default_rng(6)
    dx = 1e-3
    paths = np.cumsum(np.sqrt(dx) * g.normal(size=(200, 4000)), axis=1)
    assert holder_exponent(paths, dx, [1, 2, 4, 8, 16, 32]) == pytest.approx(0.5, abs=0.05)
    r = regularity_report(paths, dx, u=0.01)
    assert r.holder_exponent == pytest.approx(0.5, abs=0.05)


def test_violations_reported():
    g = np.random.default_rng(7)
    r = regularity_report(g.normal(size=(50, 30)) * 10, 0.01, C0=1.0)
    assert "exp_moment" in r.violations and "space_ratio" in r.violations


# ---------------------------------------------------------------- dequantization


def test_dequantize_stays_in_cell():
    g = np.random.default_rng(8)
    v = np.arange(-5, 6) * 0.2
    d = dequantize(np.repeat(v, 100), 0.2, g)
    assert np.all(np.abs(d - np.repeat(v, 100)) <= 0.1)


def test_dequantized_cdf_is_piecewise_linear():
    cdf = dequantized_cdf([0, 2], [0.25, 0.75], 1.0, 0.0, 2.0)
    np.testing.assert_allclose(cdf(np.array([-1.0, 0.0, 1.0, 2.0, 3.0])), [0, 0.125, 0.25, 0.625, 1.0])


def test_population_ks_matches_sampled():
    # binomial lattice law rescaled to unit variance
    n = 400
    k = np.arange(n + 1)
    probs = sps.binom.pmf(k, n, 0.5)
    scale = 2 / np.sqrt(n)
    pop = population_ks_to_normal(k, probs, scale, n / 2, scale)
    g = np.random.default_rng(9)
    draws = dequantize(scale * (g.binomial(n, 0.5, 200000) - n / 2), scale, g)
    assert abs(sps.kstest(draws, "norm").statistic - pop) <= 0.005
    assert pop < 0.01

"""Acceptance criteria, one test each, run from the shipped configs.

Every test prints a single ``PASS``/``FAIL`` line naming its criterion.  The
heavy experiments are shared through a cache so each config runs once.
"""
import functools
import time
from pathlib import Path

import pytest

from dasep.config import load_config
from dasep.experiments import execute, run_experiment
from dasep.hopf_cole import generator_identity_check

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@functools.lru_cache(maxsize=None)
def result(kind):
    res, _, _ = execute(load_config(CONFIGS / f"{kind}.yaml"))
    return res


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number:>2} {title}: {detail}")
        return ok

    return emit


def test_criterion_01_generator_identity(report):
    t0 = time.perf_counter()
    chk = generator_identity_check([1.0, 0.1, 0.01], (-20, 20))
    elapsed = time.perf_counter() - t0
    ok = chk.max_residual <= 1e-10 * chk.max_abs_z and elapsed < 1.0
    report(1, "generator identity", ok,
           f"max residual {chk.max_residual:.3g} vs 1e-10 max|Z| = {1e-10 * chk.max_abs_z:.3g}, "
           f"{chk.n_configs} configs, {elapsed * 1e3:.1f} ms")
    assert ok


def test_criterion_02_martingale_suite(report):
    cfg = load_config(CONFIGS / "verify-martingale.yaml")
    assert cfg["model.eps"] == 0.1 and cfg["domain.x_max"] - cfg["domain.x_min"] + 1 == 256
    assert cfg["run.t_end"] == 50 and cfg["run.ensemble"] == 2000 and len(cfg["run.sites"]) == 5
    r = result("verify-martingale")
    ok = r.checks["mean_zero"] and r.checks["qv_match"] and r.checks["bound_holds"]
    m = r.metrics
    report(2, "martingale suite", ok,
           f"max |mean M|/SE {m['max_z_mean']:.2f}, max QV z {m['max_z_qv']:.2f}, bound violations {m['bound_violations']}")
    assert ok


def test_criterion_03_duhamel(report):
    r = result("verify-kernels")
    ok = r.checks["duhamel"]
    report(3, "Duhamel reconstruction", ok, f"max relative error {r.metrics['duhamel_max_error']:.3g} over 20 seeds (tol 1e-6)")
    assert ok


def test_criterion_04_stationary(report):
    r = result("stationary")
    m = r.metrics
    ok = r.checks["chi2"] and r.checks["dynamic_invariance"] and r.checks["unit_variance"]
    report(4, "stationary measure", ok,
           f"chi2 p {m['chi2_pvalue']:.3g}, dynamic KS p {m['dynamic_pvalue']:.3g}, "
           f"variance even {m['var_even']:.5f} odd {m['var_odd']:.5f}")
    assert ok


def test_criterion_05_kernels(report):
    r = result("verify-kernels")
    m = r.metrics
    names = ("bessel_vs_ode", "mass", "gradient_slope", "gradient_c1")
    ok = all(r.checks[k] for k in names)
    report(5, "kernel identities", ok,
           f"ODE error {m['ode_error']:.3g}, mass error {max(m[k] for k in m if k.startswith('mass_error')):.3g}, "
           f"slope {m['gradient_slope']:.4f}, c1 {m['gradient_c1']:.4f}")
    assert ok


def test_criterion_06_spde(report):
    r = result("spde")
    m = r.metrics
    ok = r.checks["mode_variance"] and r.checks["martingale_problem"] and r.checks["chain_rule"]
    report(6, "SPDE solver", ok,
           f"mode max z {m['mode_max_z']:.2f}, M max z {m['mp_max_z_m']:.2f}, N max z {m['mp_max_z_n']:.2f}, "
           f"chain-rule KS p {m['chain_pvalue']:.3g}")
    assert ok


def test_criterion_07_converge(report):
    r = result("converge")
    d = r.metrics["ks_by_eps"]
    ok = r.checks["ks_monotone"] and r.checks["ks_small"] and "ou_calibration" in r.metrics
    report(7, "line convergence", ok, "KS " + ", ".join(f"eps={e}: {v:.4f}" for e, v in d.items()) + " (tol 0.05)")
    assert ok


def test_criterion_08_periodic_converge(report):
    r = result("periodic-converge")
    d = r.metrics["ks_by_N"]
    ok = r.checks["ks_monotone"] and r.checks["ks_small"]
    report(8, "periodic convergence", ok, "KS " + ", ".join(f"N={n}: {v:.4f}" for n, v in d.items()) + " (tol 0.07)")
    assert ok


def test_criterion_09_lemma_constants(report):
    r = result("verify-generator")
    m = r.metrics
    ok = r.checks["lemma_c0"] and r.checks["lemma_c1"]
    report(9, "rate constants", ok,
           f"c0 spread {m['identity_c0_spread']:.2f}, c1 spread {m['identity_c1_spread']:.2f} (tol 2)")
    assert ok


@pytest.mark.parametrize("kind", ["simulate", "verify-generator", "stationary"])
def test_criterion_10_reproducible(kind, tmp_path, report):
    cfg = load_config(CONFIGS / f"{kind}.yaml")
    run_experiment(cfg, tmp_path / "a", threads=1)
    run_experiment(cfg, tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "a").iterdir() if p.name != "timing.json")
    same = [(tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in names]
    ok = all(same) and len(names) > 1
    report(10, f"reproducibility ({kind})", ok, f"{sum(same)}/{len(names)} files byte-identical")
    assert ok

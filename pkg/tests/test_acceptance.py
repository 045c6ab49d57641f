"""Acceptance criteria at full Monte Carlo scale with the predeclared master seed 0."""

import time

import numpy as np
import pytest

from conftest import record_criterion
from finite_support import FiniteLaw, table_nuisances
from obigrad.dgp import FqeDesign, IvDesign, continuation_features, fqe_conditional_features, fqe_matrix, iv_ground_truth, iv_sample
from obigrad.estimator import dr_population_bias, plugin_bias_decomposition, plugin_score, pseudo_outcome
from obigrad.harness import ExperimentConfig, emit_reports, run_experiment, uniform_error_sweep

SEED = 0
SIZES = (200, 400, 800, 1600, 3200)
IV_OBIGRAD = (0.0388, 0.0249, 0.0193, 0.0132, 0.0098)
ROOT_OBIGRAD = (0.0056, 0.0038, 0.0029, 0.0019, 0.0014)

_cache = {}


def _run(design, reps, **kw):
    key = (design, reps, tuple(sorted(kw.items())))
    if key not in _cache:
        start = time.perf_counter()
        result = run_experiment(ExperimentConfig(design=design, replications=reps, master_seed=SEED, **kw))
        _cache[key] = (result, time.perf_counter() - start)
    return _cache[key]


def _ordered(hi, lo):
    """``hi >= lo`` up to two combined MC error bars."""
    return hi["rmse"] >= lo["rmse"] - 2 * np.hypot(hi["rmse_err"], lo["rmse_err"])


def test_criterion_01_iv_gradient_table():
    res, elapsed = _run("iv_gradient", 300)
    rmse = [res.row(n, "obigrad")["rmse"] for n in SIZES]
    within = [abs(r / p - 1) <= 0.25 for r, p in zip(rmse, IV_OBIGRAD)]
    order = [_ordered(res.row(n, "plugin"), res.row(n, "obigrad")) and _ordered(res.row(n, "obigrad"), res.row(n, "oracle_dr"))
             for n in SIZES]
    ok = all(within) and all(order) and elapsed < 600
    record_criterion(1, ok, f"obigrad rmse {np.round(rmse, 4).tolist()} ordering {order} {elapsed:.0f}s")
    assert all(within), rmse
    assert all(order)
    assert elapsed < 600


def test_criterion_02_fqe_gradient_gap():
    res, _ = _run("fqe_gradient", 200, sample_sizes=(200,))
    ob, pi = res.row(200, "obigrad")["rmse"], res.row(200, "plugin")["rmse"]
    ratio = ob / pi
    record_criterion(2, ratio <= 0.75, f"obigrad/plugin rmse at N=200: {ob:.4f}/{pi:.4f} = {ratio:.3f} (need <= 0.75)")
    assert ratio <= 0.75


def test_criterion_03_wald_calibration():
    res, _ = _run("iv_wald", 300)
    cov = {n: res.row(n, "obigrad")["coverage"] for n in SIZES}
    pi_cov = {n: res.row(n, "plugin")["coverage"] for n in SIZES}
    in_band = all(0.92 <= cov[n] <= 0.98 for n in SIZES[1:])
    pi_below = all(pi_cov[n] < cov[n] for n in SIZES if n <= 1600)
    length = res.row(3200, "obigrad")["avg_length"]
    length_ok = abs(length / 0.0186 - 1) <= 0.15
    record_criterion(3, in_band and pi_below and length_ok,
                     f"obigrad coverage {[round(cov[n], 3) for n in SIZES]} plugin {[round(pi_cov[n], 3) for n in SIZES]} "
                     f"length@3200 {length:.4f}")
    assert in_band
    assert length_ok
    assert pi_below, "plug-in coverage is not below the orthogonal estimator's"


def test_criterion_04_clt_diagnostics():
    res, _ = _run("iv_wald", 300)
    z = res.studentized[(3200, "obigrad")].ravel()
    mean, sd = float(z.mean()), float(z.std(ddof=1))
    ok = -0.1 <= mean <= 0.1 and 0.9 <= sd <= 1.1
    record_criterion(4, ok, f"studentized mean {mean:.3f} sd {sd:.3f}")
    assert ok


def test_criterion_05_kbo_decomposition():
    res, _ = _run("iv_kbo", 200)
    rows = {r["lambda"]: r for r in res.kbo_rows}
    grid = [lam for lam in sorted(rows) if 1e-3 <= lam <= 1e-1]
    bias = [rows[lam]["reg_bias"] for lam in grid]
    monotone = all(b2 >= b1 for b1, b2 in zip(bias, bias[1:]))
    match = abs(rows[1e-2]["reg_bias"] / 0.2465 - 1) <= 0.2 and abs(rows[1e-1]["reg_bias"] / 0.3517 - 1) <= 0.2
    beats = all(r["obigrad"] < r["kbo_total"] for r in res.kbo_rows)
    record_criterion(5, monotone and match and beats,
                     f"reg bias {np.round(bias, 4).tolist()} obigrad {res.kbo_rows[0]['obigrad']:.4f} "
                     f"min kbo total {min(r['kbo_total'] for r in res.kbo_rows):.4f}")
    assert monotone and match and beats


def test_criterion_06_root_experiments():
    res, _ = _run("iv_root", 200)
    rmse = [res.row(n, "obigrad")["rmse"] for n in (100, 200, 400, 800, 1600)]
    within = [abs(r / p - 1) <= 0.3 for r, p in zip(rmse, ROOT_OBIGRAD)]
    fixed = [r for r in res.population_rows if r["schedule"] == "fixed"][0]
    bias_ok = abs(fixed["bias"] / 0.268 - 1) <= 0.15
    record_criterion(6, all(within) and bias_ok,
                     f"obigrad root rmse {np.round(rmse, 4).tolist()} population root {fixed['population_root']:.4f} "
                     f"bias {fixed['bias']:.4f}")
    assert all(within) and bias_ok


def test_criterion_07_orthogonality_suite():
    worst_identity = worst_single = worst_slope = 0.0
    for seed in range(200):
        law = FiniteLaw.random(seed, k=6, l=5, s=4)
        rng = np.random.default_rng(10_000 + seed)
        omega = rng.standard_normal(2)
        data, w = law.joint()
        h, j, m = law.oracle_tables(omega)
        oracle = law.oracle(omega)
        psi = law.psi(omega)
        dh, dj, dm = (rng.standard_normal(a.shape) for a in (h, j, m))

        eta = table_nuisances(law.x_support, h + dh, j + dj, m + dm)
        exact = w @ pseudo_outcome(data, eta, law.model, omega) - psi
        terms = dr_population_bias(eta, oracle, law.x_points(), law.p_x)
        worst_identity = max(worst_identity, np.max(np.abs(exact - terms.dr_total)))

        for pert in ((dh, 0, 0), (0, dj, 0), (0, 0, dm)):
            eta = table_nuisances(law.x_support, h + pert[0], j + pert[1], m + pert[2])
            exact = w @ pseudo_outcome(data, eta, law.model, omega) - psi
            worst_single = max(worst_single, np.max(np.abs(exact)))

        slope = np.einsum("k,kq,kdq->d", law.p_x, dh, j)
        for eps in (0.01, 0.1, 1.0):
            eta = table_nuisances(law.x_support, h + eps * dh, j, m)
            exact = w @ plugin_score(data, eta) - psi
            worst_slope = max(worst_slope, np.max(np.abs(exact - eps * slope)))
            decomposition = plugin_bias_decomposition(eta, oracle, law.x_points(), law.p_x).plugin_total
            worst_slope = max(worst_slope, np.max(np.abs(decomposition - eps * slope)))
    ok = max(worst_identity, worst_single, worst_slope) <= 1e-12
    record_criterion(7, ok, f"max deviations: identity {worst_identity:.1e} single {worst_single:.1e} slope {worst_slope:.1e}")
    assert ok


def test_criterion_08_dgp_oracles():
    design = FqeDesign()
    rng = np.random.default_rng(SEED)
    points = np.column_stack([rng.standard_normal(5), rng.integers(0, 2, 5)])
    fqe_ok = True
    for s, a in points:
        s_next = design.rho * s + design.tau * a + design.sigma_s * rng.standard_normal(1_000_000)
        draws = design.gamma * continuation_features("full", s_next)
        se = draws.std(axis=0, ddof=1) / np.sqrt(len(draws))
        fqe_ok &= bool(np.all(np.abs(draws.mean(axis=0) - fqe_conditional_features(design, s, a)) <= 3 * se))

    iv = IvDesign()
    truth = iv_ground_truth(iv)
    data = iv_sample(iv, 1_000_000, np.random.default_rng(SEED))
    scores = pseudo_outcome(data, truth.oracle_nuisances(iv.omega0), iv.model(), iv.omega0)
    se = scores.std(axis=0, ddof=1) / np.sqrt(len(scores))
    z_iv = np.abs(scores.mean(axis=0) - truth.psi(iv.omega0)) / se
    iv_ok = bool(np.all(z_iv <= 3))

    drift = max(np.max(np.abs(fqe_matrix(d, 64) - fqe_matrix(d, 128)))
                for d in (design, FqeDesign(gamma=0.9, policy="logistic"), FqeDesign(features="trig", omega_star_values=(0.65, -0.45))))
    quad_ok = drift <= 1e-10
    record_criterion(8, fqe_ok and iv_ok and quad_ok,
                     f"fqe mc {fqe_ok} iv |z| max {z_iv.max():.2f} quadrature drift {drift:.1e}")
    assert fqe_ok and iv_ok and quad_ok


def test_criterion_09_uniform_rate():
    cfg = ExperimentConfig(design="iv_gradient", replications=100, master_seed=SEED, sample_sizes=(400, 1600))
    res = uniform_error_sweep(cfg)
    ok = 1.6 <= res.ratio <= 2.6
    record_criterion(9, ok, f"sup-error ratio N=400/N=1600 {res.ratio:.3f} over {len(res.grid)} grid points")
    assert ok


def test_criterion_10_determinism(tmp_path):
    first, _ = _run("iv_gradient", 300)
    emit_reports(first, tmp_path / "a")
    again = run_experiment(ExperimentConfig(design="iv_gradient", replications=300, master_seed=SEED, workers=2))
    emit_reports(again, tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "a").glob("*.csv"))
    same = [(tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in names]
    ok = bool(names) and all(same)
    record_criterion(10, ok, f"{sum(same)}/{len(names)} CSV files byte-identical across serial and 2-worker runs")
    assert ok

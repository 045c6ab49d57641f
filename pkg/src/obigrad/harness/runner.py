"""Replications with derived seeds, executed serially or on a process pool."""

from __future__ import annotations

import contextlib
import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache, partial
from typing import Callable, Optional

import numpy as np

from ..core import ObigradError
from ..dgp import DesignBundle, cached_design, make_design
from ..estimator import CrossFitter, OracleScorer, oracle_dr_estimate
from ..kbo import RegularizedPopulation, kbo_gradient_path
from ..nuisance import features, l2_norm
from ..optimize import KernelGradient, solve_affine
from .config import ExperimentConfig

# Expected estimator failures are recorded per cell instead of aborting a replication.
RECOVERABLE = (ObigradError, np.linalg.LinAlgError, FloatingPointError)

_EVAL_STREAM, _TARGET_STREAM = 1, 2
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def replication_rngs(master: int, n: int, rep: int, stream: int = 0) -> tuple[np.random.Generator, int]:
    """Data generator and fold seed for one replication, independent of execution order."""
    data_ss, fold_ss = np.random.SeedSequence([master, n, rep, stream]).spawn(2)
    return np.random.default_rng(data_ss), int(fold_ss.generate_state(1)[0])


def auxiliary_seed(master: int, stream: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([master, 0, 0, stream])


@dataclass(frozen=True, eq=False)
class Context:
    bundle: DesignBundle
    omega: np.ndarray
    truth: np.ndarray
    x_eval: Optional[np.ndarray]
    phi_eval: Optional[np.ndarray]
    oracle_eval: Optional[tuple]


@lru_cache(maxsize=8)
def experiment_context(config: ExperimentConfig) -> Context:
    bundle = cached_design(config.design) if config.features is None else make_design(config.design, config.learner())
    omega = bundle.omega_eval if config.omega is None else np.asarray(config.omega, dtype=float)
    x_eval = phi_eval = oracle_eval = None
    if config.kind in ("gradient", "kbo"):
        x_eval = bundle.truth.sample_x(config.eval_samples, auxiliary_seed(config.master_seed, _EVAL_STREAM))
        phi_eval = features(bundle.learner.feature_map, x_eval)
        oracle_eval = bundle.truth.oracle_nuisances(omega).evaluate(x_eval)
    truth = bundle.truth.omega_star if config.kind == "root" else bundle.truth.psi(omega)
    return Context(bundle, omega, truth, x_eval, phi_eval, oracle_eval)


def _fail(exc: Exception) -> str:
    return f"{type(exc).__name__}: {exc}"


def _nuisance_record(cf: CrossFitter, omega, ctx: Context) -> dict:
    hs, js, ms = ctx.oracle_eval
    out = {"h": 0.0, "j": 0.0, "m": 0.0, "product": 0.0}
    for fold in (0, 1):
        h, j, m = cf.nuisances(omega, fold).evaluate_features(ctx.phi_eval)
        eh, ej, em = l2_norm(h - hs), l2_norm(j - js), l2_norm(m - ms)
        for key, v in (("h", eh), ("j", ej), ("m", em), ("product", ej * (eh + em))):
            out[key] += v / 2
    return out


def _gradient_cells(config: ExperimentConfig, ctx: Context, data, fold_seed: int, rec: dict) -> None:
    b, omega = ctx.bundle, ctx.omega
    cf = None
    for method in config.estimators:
        if method == "kbo":
            continue
        try:
            if method == "oracle_dr":
                report = oracle_dr_estimate(data, b.model, omega, b.truth.oracle_nuisances(omega), config.alpha)
            else:
                if cf is None:
                    cf = CrossFitter(data, b.model, b.learner, fold_seed)
                report = cf.estimate(omega, method, config.alpha)
        except RECOVERABLE as exc:
            rec["errors"][method] = _fail(exc)
            continue
        rec["estimates"][method] = {
            "psi_hat": report.psi_hat.tolist(),
            "var": np.diag(report.sigma_hat).tolist(),
            "ci_lower": report.ci_lower.tolist(),
            "ci_upper": report.ci_upper.tolist(),
        }
    if cf is not None:
        try:
            rec["nuisance"] = _nuisance_record(cf, omega, ctx)
        except RECOVERABLE as exc:
            rec["errors"]["nuisance"] = _fail(exc)
    if "kbo" in config.estimators:
        try:
            path = kbo_gradient_path(data, b.model, omega, config.kernel(), config.kbo_lambdas, fold_seed)
            rec["kbo"] = path.tolist()
        except RECOVERABLE as exc:
            rec["errors"]["kbo"] = _fail(exc)


def decayed_lambda(config: ExperimentConfig, n: int) -> float:
    c, a = config.kbo_decay
    return float(c * n ** (-a))


def _root_cells(config: ExperimentConfig, ctx: Context, data, fold_seed: int, rec: dict) -> None:
    b = ctx.bundle
    d = b.model.d
    cf = None
    for method in config.estimators:
        try:
            if method in ("obigrad", "plugin", "plugin_crossfit"):
                if cf is None:
                    cf = CrossFitter(data, b.model, b.learner, fold_seed)
                grad = partial(cf.gradient, method=method)
            elif method == "oracle_dr":
                grad = OracleScorer(data, b.model, b.truth.oracle_nuisances).gradient
            elif method in ("kbo_fixed", "kbo_decay"):
                lam = config.kbo_lambdas[0] if method == "kbo_fixed" else decayed_lambda(config, len(data))
                grad = KernelGradient(data, b.model, config.kernel(lam), fold_seed).gradient
            else:
                raise ValueError(f"unknown root estimator {method!r}")
            root = solve_affine(grad, d)
        except RECOVERABLE as exc:
            rec["errors"][method] = _fail(exc)
            continue
        rec["estimates"][method] = {"root": root.tolist()}


def run_replication(config: ExperimentConfig, n: int, rep: int) -> dict:
    """Sample one dataset and run every configured estimator on it."""
    ctx = experiment_context(config)
    rng, fold_seed = replication_rngs(config.master_seed, n, rep)
    data = ctx.bundle.sample(n, rng)
    rec = {"N": int(n), "rep": int(rep), "truth": ctx.truth.tolist(), "estimates": {}, "errors": {}}
    if config.kind == "root":
        _root_cells(config, ctx, data, fold_seed, rec)
    else:
        _gradient_cells(config, ctx, data, fold_seed, rec)
    return rec


@contextlib.contextmanager
def _single_threaded_blas():
    saved = {k: os.environ.get(k) for k in _THREAD_VARS}
    os.environ.update({k: "1" for k in _THREAD_VARS})
    try:
        yield
    finally:
        for k, v in saved.items():
            if v is None:
                os.environ.pop(k, None)
            else:
                os.environ[k] = v


def _call(fn, args):
    return fn(*args)


def map_tasks(fn: Callable, tasks: list[tuple], workers: int) -> list:
    """Apply ``fn`` to each argument tuple, preserving task order."""
    if workers <= 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    chunk = max(1, len(tasks) // (4 * workers))
    with _single_threaded_blas():
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            return list(pool.map(partial(_call, fn), tasks, chunksize=chunk))


def regularized_targets(config: ExperimentConfig) -> np.ndarray:
    """Regularized population gradient for each penalty in the grid, ``(L, d)``."""
    ctx = experiment_context(config)
    pop = RegularizedPopulation(
        ctx.bundle.truth, config.kernel(), config.target_samples, auxiliary_seed(config.master_seed, _TARGET_STREAM)
    )
    return np.array([pop.target(ctx.omega, lam) for lam in config.kbo_lambdas])


def population_roots(config: ExperimentConfig) -> list[tuple[str, float, np.ndarray]]:
    """Regularized population roots for the fixed and each decaying penalty."""
    ctx = experiment_context(config)
    pop = RegularizedPopulation(
        ctx.bundle.truth, config.kernel(), config.target_samples, auxiliary_seed(config.master_seed, _TARGET_STREAM)
    )
    lams = [("fixed", lam) for lam in config.kbo_lambdas[:1]]
    lams += [(f"decay_N{n}", decayed_lambda(config, n)) for n in config.sample_sizes]
    return [(label, lam, pop.root(lam)) for label, lam in lams]


def run_experiment(config: ExperimentConfig, workers: Optional[int] = None):
    """Run every ``(N, replication)`` cell and aggregate."""
    from .metrics import aggregate

    tasks = [(config, n, rep) for n in config.sample_sizes for rep in range(config.replications)]
    records = map_tasks(run_replication, tasks, config.worker_count() if workers is None else workers)
    extras = {}
    if config.kind == "kbo" and "kbo" in config.estimators:
        extras["reg_targets"] = regularized_targets(config)
    if config.kind == "root" and any(m.startswith("kbo") for m in config.estimators):
        extras["population_roots"] = population_roots(config)
    return aggregate(records, config, extras)

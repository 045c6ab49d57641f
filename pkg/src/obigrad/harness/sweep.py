"""Sup-over-grid error of the one-fold orthogonal estimator as the sample grows."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..estimator import CrossFitter
from .config import ExperimentConfig
from .metrics import rmse_with_error
from .runner import RECOVERABLE, experiment_context, map_tasks, replication_rngs

_SWEEP_STREAM = 1


def default_grid(omega, radius: float) -> np.ndarray:
    """``omega`` followed by ``omega -/+ radius e_k`` for each coordinate."""
    omega = np.asarray(omega, dtype=float)
    pts = [omega]
    for k in range(len(omega)):
        for sign in (-1.0, 1.0):
            p = omega.copy()
            p[k] += sign * radius
            pts.append(p)
    return np.array(pts)


def sweep_replication(config: ExperimentConfig, grid: np.ndarray, n: int, rep: int) -> dict:
    ctx = experiment_context(config)
    b = ctx.bundle
    rng, fold_seed = replication_rngs(config.master_seed, n, rep, _SWEEP_STREAM)
    data = b.sample(n, rng)
    rec = {"N": int(n), "rep": int(rep)}
    try:
        cf = CrossFitter(data, b.model, b.learner, fold_seed)
        errors = [float(np.linalg.norm(cf.one_fold(w) - b.truth.psi(w))) for w in grid]
    except RECOVERABLE as exc:
        rec["error"] = f"{type(exc).__name__}: {exc}"
        return rec
    rec["errors"] = errors
    rec["sup_error"] = max(errors)
    rec["center_error"] = errors[0]
    return rec


@dataclass
class SweepResult:
    design: str
    config: ExperimentConfig
    grid: np.ndarray
    rows: list[dict]
    records: list[dict]
    slope: float
    ratio: float
    failures: int = 0
    extra: dict = field(default_factory=dict)


def uniform_error_sweep(
    config: ExperimentConfig,
    omega_grid: Optional[np.ndarray] = None,
    sizes: Optional[Sequence[int]] = None,
    workers: Optional[int] = None,
) -> SweepResult:
    """Mean over replications of ``sup_omega ||psi_hat(omega) - psi(omega)||`` for each ``N``.

    ``ratio`` is the mean sup error at the smallest ``N`` over that at the
    largest; ``slope`` is the least-squares slope of log error on log ``N``.
    """
    ctx = experiment_context(config)
    grid = default_grid(ctx.omega, config.sweep_radius) if omega_grid is None else np.atleast_2d(omega_grid)
    if len(grid) == 0:
        raise ValueError("omega grid is empty")
    sizes = tuple(config.sample_sizes if sizes is None else sizes)
    tasks = [(config, grid, n, rep) for n in sizes for rep in range(config.replications)]
    records = map_tasks(sweep_replication, tasks, config.worker_count() if workers is None else workers)
    records.sort(key=lambda r: (r["N"], r["rep"]))
    rows = []
    for n in sizes:
        ok = [r for r in records if r["N"] == n and "sup_error" in r]
        sup = np.array([r["sup_error"] for r in ok])
        centre = np.array([r["center_error"] for r in ok])
        rows.append({
            "N": n,
            "mean_sup_error": float(sup.mean()) if sup.size else float("nan"),
            "sup_error_err": float(1.959964 * sup.std(ddof=1) / np.sqrt(sup.size)) if sup.size > 1 else float("nan"),
            "mean_center_error": float(centre.mean()) if centre.size else float("nan"),
            "center_rmse": rmse_with_error(centre**2)[0],
            "n_reps": len(ok),
            "n_failed": sum(1 for r in records if r["N"] == n) - len(ok),
        })
    means = np.array([r["mean_sup_error"] for r in rows])
    if len(sizes) > 1:
        slope = float(np.polyfit(np.log(sizes), np.log(means), 1)[0])
        ratio = float(means[0] / means[-1])
    else:
        slope = ratio = float("nan")
    failures = sum(r["n_failed"] for r in rows)
    return SweepResult(config.design, config, grid, rows, records, slope, ratio, failures)

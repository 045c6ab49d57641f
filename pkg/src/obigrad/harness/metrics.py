"""Aggregation of replication records into experiment tables."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..estimator import normal_quantile
from .config import ExperimentConfig

Z95 = normal_quantile(0.975)


def rmse_with_error(sq_errors) -> tuple[float, float]:
    """RMSE and the half-width of its 95% interval by the delta method on squared errors.

    The half-width is NaN with fewer than two replications.
    """
    sq = np.asarray(sq_errors, dtype=float)
    if sq.size == 0:
        return float("nan"), float("nan")
    rmse = float(np.sqrt(sq.mean()))
    if sq.size < 2:
        return rmse, float("nan")
    if rmse == 0.0:
        return 0.0, 0.0
    se = sq.std(ddof=1) / np.sqrt(sq.size)
    return rmse, float(Z95 * se / (2 * rmse))


def wilson_interval(successes: int, trials: int, z: float = Z95) -> tuple[float, float]:
    if trials == 0:
        return float("nan"), float("nan")
    p = successes / trials
    denom = 1 + z**2 / trials
    center = (p + z**2 / (2 * trials)) / denom
    half = z * np.sqrt(p * (1 - p) / trials + z**2 / (4 * trials**2)) / denom
    return float(center - half), float(center + half)


def _nan_stat(fn, values):
    values = np.asarray(values, dtype=float)
    return float(fn(values)) if values.size else float("nan")


@dataclass
class ExperimentResult:
    design: str
    kind: str
    config: ExperimentConfig
    rows: list[dict]
    records: list[dict]
    kbo_rows: list[dict] = field(default_factory=list)
    population_rows: list[dict] = field(default_factory=list)
    studentized: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)

    def row(self, n: int, estimator: str) -> dict:
        for r in self.rows:
            if r["N"] == n and r["estimator"] == estimator:
                return r
        raise KeyError((n, estimator))


def _gradient_row(n, method, recs, d) -> tuple[dict, np.ndarray]:
    ok = [r for r in recs if method in r["estimates"]]
    row = {"N": n, "estimator": method, "n_reps": len(ok), "n_failed": len(recs) - len(ok)}
    if not ok:
        return row, np.empty(0)
    truth = np.array([r["truth"] for r in ok])
    est = np.array([r["estimates"][method]["psi_hat"] for r in ok])
    lo = np.array([r["estimates"][method]["ci_lower"] for r in ok])
    hi = np.array([r["estimates"][method]["ci_upper"] for r in ok])
    var = np.array([r["estimates"][method]["var"] for r in ok])
    err = est - truth
    row["rmse"], row["rmse_err"] = rmse_with_error(np.sum(err**2, axis=1))
    covered = (lo <= truth) & (truth <= hi)
    row["coverage"] = float(covered.mean())
    c_lo, c_hi = wilson_interval(int(covered.sum()), covered.size)
    row["coverage_lo"], row["coverage_hi"] = c_lo, c_hi
    row["coverage_err"] = (c_hi - c_lo) / 2
    row["avg_length"] = float((hi - lo).mean())
    se = np.sqrt(var / n)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, err / se, np.nan)
    z_flat = z[np.isfinite(z)]
    row["z_mean"] = _nan_stat(np.mean, z_flat)
    row["z_sd"] = float(z_flat.std(ddof=1)) if z_flat.size > 1 else float("nan")
    for name, q in (("z_q025", 2.5), ("z_median", 50.0), ("z_q975", 97.5)):
        row[name] = float(np.percentile(z_flat, q)) if z_flat.size else float("nan")
    row["z_exceed"] = float(np.mean(np.abs(z_flat) > Z95)) if z_flat.size else float("nan")
    if method == "oracle_dr":
        for key in ("h_error", "j_error", "m_error", "product_bias"):
            row[key] = 0.0
    else:
        nu = [r["nuisance"] for r in ok if "nuisance" in r]
        for key, src in (("h_error", "h"), ("j_error", "j"), ("m_error", "m"), ("product_bias", "product")):
            row[key] = _nan_stat(np.mean, [v[src] for v in nu])
    return row, z


def _root_row(n, method, recs) -> dict:
    ok = [r for r in recs if method in r["estimates"]]
    row = {"N": n, "estimator": method, "n_reps": len(ok), "n_failed": len(recs) - len(ok)}
    if not ok:
        return row
    err = np.array([r["estimates"][method]["root"] for r in ok]) - np.array([r["truth"] for r in ok])
    norms = np.linalg.norm(err, axis=1)
    row["rmse"], row["rmse_err"] = rmse_with_error(norms**2)
    row["bias_norm"] = float(np.linalg.norm(err.mean(axis=0)))
    row["mean_abs"] = float(norms.mean())
    row["median_abs"] = float(np.median(norms))
    row["q90_abs"] = float(np.percentile(norms, 90))
    return row


def _kbo_rows(config, recs, targets) -> list[dict]:
    ok = [r for r in recs if "kbo" in r]
    if not ok:
        return []
    truth = np.array(ok[0]["truth"])
    paths = np.array([r["kbo"] for r in ok])
    base = {}
    for method in ("obigrad", "plugin", "oracle_dr"):
        est = [r["estimates"][method]["psi_hat"] for r in recs if method in r["estimates"]]
        base[method] = rmse_with_error(np.sum((np.array(est) - truth) ** 2, axis=1)) if est else (float("nan"),) * 2
    rows = []
    for i, lam in enumerate(config.kbo_lambdas):
        total = rmse_with_error(np.sum((paths[:, i] - truth) ** 2, axis=1))
        estimation = rmse_with_error(np.sum((paths[:, i] - targets[i]) ** 2, axis=1))
        rows.append({
            "lambda": lam,
            "kbo_total": total[0],
            "kbo_total_err": total[1],
            "reg_bias": float(np.linalg.norm(targets[i] - truth)),
            "kbo_estimation": estimation[0],
            "kbo_estimation_err": estimation[1],
            "obigrad": base["obigrad"][0],
            "obigrad_err": base["obigrad"][1],
            "plugin": base["plugin"][0],
            "plugin_err": base["plugin"][1],
            "oracle_dr": base["oracle_dr"][0],
            "n_failed": len(recs) - len(ok),
        })
    return rows


def aggregate(records: list[dict], config: ExperimentConfig, extras: Optional[dict] = None) -> ExperimentResult:
    """Summarize replication records; the result does not depend on record order."""
    if not records:
        raise ValueError("aggregate needs at least one record")
    extras = extras or {}
    records = sorted(records, key=lambda r: (r["N"], r["rep"]))
    sizes = sorted({r["N"] for r in records})
    failures = {}
    for r in records:
        for method in r["errors"]:
            failures[(r["N"], method)] = failures.get((r["N"], method), 0) + 1
    result = ExperimentResult(config.design, config.kind, config, [], records, failures=failures)
    d = len(records[0]["truth"])
    for n in sizes:
        recs = [r for r in records if r["N"] == n]
        for method in config.estimators:
            if config.kind == "root":
                result.rows.append(_root_row(n, method, recs))
            elif method != "kbo":
                row, z = _gradient_row(n, method, recs, d)
                result.rows.append(row)
                result.studentized[(n, method)] = z
        if config.kind == "kbo" and "reg_targets" in extras:
            result.kbo_rows = _kbo_rows(config, recs, np.asarray(extras["reg_targets"]))
    for label, lam, root in extras.get("population_roots", []):
        truth = np.asarray(records[0]["truth"])
        result.population_rows.append({
            "schedule": label,
            "lambda": lam,
            "population_root": float(root[0]) if len(root) == 1 else root.tolist(),
            "bias": float(np.linalg.norm(root - truth)),
        })
    return result

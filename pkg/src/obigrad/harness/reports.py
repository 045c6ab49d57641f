"""CSV and JSON emission with fixed six-significant-digit formatting."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.special import ndtri

from ..core import ObigradError
from .config import dump_config
from .metrics import ExperimentResult
from .sweep import SweepResult

GRADIENT_COLUMNS = ("N", "estimator", "rmse", "rmse_err", "coverage", "coverage_err", "product_bias")
DIAGNOSTIC_COLUMNS = GRADIENT_COLUMNS + (
    "avg_length", "coverage_lo", "coverage_hi", "h_error", "j_error", "m_error",
    "z_mean", "z_sd", "z_q025", "z_median", "z_q975", "z_exceed", "n_reps", "n_failed",
)
KBO_COLUMNS = ("lambda", "kbo_total", "reg_bias", "kbo_estimation", "obigrad", "plugin")
KBO_DETAIL_COLUMNS = KBO_COLUMNS + ("kbo_total_err", "kbo_estimation_err", "obigrad_err", "plugin_err", "oracle_dr", "n_failed")
ROOT_COLUMNS = ("N", "estimator", "rmse", "rmse_err", "bias_norm", "mean_abs", "median_abs", "q90_abs", "n_failed")
POPULATION_COLUMNS = ("schedule", "lambda", "population_root", "bias")
SWEEP_COLUMNS = ("N", "mean_sup_error", "sup_error_err", "mean_center_error", "center_rmse", "n_reps", "n_failed")
QQ_COLUMNS = ("N", "estimator", "rank", "studentized", "normal_quantile")


class ReportError(ObigradError):
    kind = "io_error"


def fmt(value) -> str:
    if value is None:
        return "NA"
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "NA" if not math.isfinite(value) else f"{float(value):.6g}"
    if isinstance(value, (list, tuple, np.ndarray)):
        return ";".join(fmt(v) for v in value)
    return str(value)


def _round(value):
    if isinstance(value, (float, np.floating)):
        return float(f"{float(value):.6g}") if math.isfinite(value) else None
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, dict):
        return {str(k): _round(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_round(v) for v in value]
    return value


def write_table(path: Path, rows: Iterable[dict], columns: Sequence[str]) -> Path:
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for row in rows:
                w.writerow([fmt(row.get(c)) for c in columns])
    except OSError as exc:
        raise ReportError(f"{path}: {exc.strerror}") from None
    return path


def _write_text(path: Path, text: str) -> Path:
    try:
        path.write_text(text)
    except OSError as exc:
        raise ReportError(f"{path}: {exc.strerror}") from None
    return path


def qq_rows(n: int, method: str, z: np.ndarray) -> list[dict]:
    """Sorted studentized errors against standard normal quantiles; one row per (replication, coordinate)."""
    flat = np.sort(np.asarray(z, dtype=float).ravel())
    m = len(flat)
    theo = ndtri((np.arange(m) + 0.5) / m) if m else np.empty(0)
    return [{"N": n, "estimator": method, "rank": i, "studentized": flat[i], "normal_quantile": theo[i]} for i in range(m)]


def _prepare(out_dir) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ReportError(f"{out}: {exc.strerror}") from None
    return out


def emit_reports(result: ExperimentResult | SweepResult, out_dir, formats: Sequence[str] = ("csv", "json", "qq")) -> list[Path]:
    """Write tables, QQ data and a JSON summary under ``out_dir``; returns the paths written."""
    out = _prepare(out_dir)
    name = result.design
    stem = f"{name}_sweep" if isinstance(result, SweepResult) else name
    paths: list[Path] = [_write_text(out / f"{stem}_config.txt", dump_config(result.config))]
    summary: dict = {"design": name, "replications": result.config.replications, "master_seed": result.config.master_seed}

    if isinstance(result, SweepResult):
        if "csv" in formats:
            paths.append(write_table(out / f"{name}_sweep.csv", result.rows, SWEEP_COLUMNS))
        summary.update({"kind": "sweep", "rows": result.rows, "slope": result.slope, "ratio": result.ratio,
                        "grid": result.grid.tolist(), "failures": result.failures})
    else:
        summary["kind"] = result.kind
        if result.kind == "root":
            if "csv" in formats:
                paths.append(write_table(out / f"{name}_root.csv", result.rows, ROOT_COLUMNS))
                if result.population_rows:
                    paths.append(write_table(out / f"{name}_population_roots.csv", result.population_rows, POPULATION_COLUMNS))
            summary["population_roots"] = result.population_rows
        else:
            if "csv" in formats:
                paths.append(write_table(out / f"{name}_table.csv", result.rows, GRADIENT_COLUMNS))
                paths.append(write_table(out / f"{name}_diagnostics.csv", result.rows, DIAGNOSTIC_COLUMNS))
                if result.kbo_rows:
                    paths.append(write_table(out / f"{name}_kbo.csv", result.kbo_rows, KBO_COLUMNS))
                    paths.append(write_table(out / f"{name}_kbo_detail.csv", result.kbo_rows, KBO_DETAIL_COLUMNS))
            if "qq" in formats:
                for (n, method), z in sorted(result.studentized.items()):
                    if method == "obigrad":
                        paths.append(write_table(out / f"{name}_qq_N{n}.csv", qq_rows(n, method, z), QQ_COLUMNS))
            summary["kbo"] = result.kbo_rows
        summary["rows"] = result.rows
        summary["failures"] = [{"N": n, "estimator": m, "count": c} for (n, m), c in sorted(result.failures.items())]
    if "json" in formats:
        paths.append(_write_text(out / f"{stem}_summary.json", json.dumps(_round(summary), indent=2, sort_keys=True) + "\n"))
    return paths

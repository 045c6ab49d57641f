"""Shared data types, dataset validation and fold splitting.

Arrays are stored row-major with one observation per row:

* ``x`` has shape ``(N, d_x)``
* ``y`` has shape ``(N, q)``
* ``z`` has shape ``(N, d_z)``

Structural models map ``(omega, z)`` to ``g`` of shape ``(N, q)`` and its
Jacobian ``dg`` of shape ``(N, d, q)``; row ``k`` of ``dg[i]`` is the
derivative of ``g`` with respect to ``omega_k``. Nuisance functions follow the
same layout: ``h(x)`` and ``m(x)`` are ``(N, q)``, ``j(x)`` is ``(N, d, q)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np


class ObigradError(Exception):
    """Base class for errors raised by this package."""

    kind = "error"


class DataError(ObigradError):
    kind = "data_error"


class ShapeError(ObigradError):
    kind = "shape_error"


class SizingError(ObigradError):
    kind = "sizing_error"


class NumericalError(ObigradError):
    kind = "numerical_error"


class Observation(NamedTuple):
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray


def _as_2d(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 1-d or 2-d, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class Dataset:
    """An ordered sample of observations ``(X, Y, Z)``.

    One-dimensional inputs are promoted to single-column matrices. Use
    :func:`validate_dataset` to check finiteness; construction only checks
    that the three blocks agree on the number of rows.
    """

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        x, y, z = _as_2d(self.x, "x"), _as_2d(self.y, "y"), _as_2d(self.z, "z")
        if not (len(x) == len(y) == len(z)):
            raise ShapeError(
                f"x, y, z row counts differ: {len(x)}, {len(y)}, {len(z)}"
            )
        if len(x) == 0:
            raise SizingError("dataset is empty")
        for arr in (x, y, z):
            arr.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)

    def __len__(self) -> int:
        return len(self.x)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.x.shape[1], self.y.shape[1], self.z.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=int)
        return Dataset(self.x[idx], self.y[idx], self.z[idx])

    def observation(self, i: int) -> Observation:
        return Observation(self.x[i], self.y[i], self.z[i])

    @classmethod
    def from_observations(cls, observations: Sequence[Observation]) -> "Dataset":
        if not observations:
            raise SizingError("dataset is empty")
        rows = [tuple(np.atleast_1d(np.asarray(v, dtype=float)) for v in obs) for obs in observations]
        for i, row in enumerate(rows):
            if tuple(len(v) for v in row) != tuple(len(v) for v in rows[0]):
                raise ShapeError(f"observation {i} has dimensions inconsistent with observation 0")
        return cls(*(np.stack([row[b] for row in rows]) for b in range(3)))


def check_omega(omega, d: Optional[int] = None) -> np.ndarray:
    """Return ``omega`` as a finite 1-d float array, optionally of length ``d``."""
    arr = np.atleast_1d(np.asarray(omega, dtype=float))
    if arr.ndim != 1 or arr.size < 1:
        raise ShapeError(f"omega must be a non-empty vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError("omega has non-finite entries")
    if d is not None and arr.size != d:
        raise ShapeError(f"omega has dimension {arr.size}, model expects {d}")
    return arr


# (A, B, D) envelope constants for |g|, |dg| and |Y|; informational only.
Bounds = tuple[float, float, float]


@dataclass(frozen=True)
class StructuralModel:
    """The parametric target ``g_omega(Z)`` of the inner regression.

    ``g(omega, z)`` returns ``(N, q)`` and ``dg(omega, z)`` returns ``(N, d, q)``.
    ``affine`` flags models whose ``g`` is affine in ``omega``; root solvers
    rely on it.
    """

    g: Callable[[np.ndarray, np.ndarray], np.ndarray]
    dg: Callable[[np.ndarray, np.ndarray], np.ndarray]
    d: int
    q: int = 1
    name: str = "custom"
    affine: bool = False
    bounds: Optional[Bounds] = None

    def check_derivative(self, z: np.ndarray, omega=None, rtol: float = 1e-5, seed: int = 0) -> float:
        """Compare ``dg`` against central differences of ``g`` at probe points.

        Returns the largest relative discrepancy and raises
        :class:`NumericalError` when it exceeds ``rtol``.
        """
        rng = np.random.default_rng(seed)
        z = _as_2d(z, "z")
        omega = rng.standard_normal(self.d) if omega is None else check_omega(omega, self.d)
        analytic = self.dg(omega, z)
        if analytic.shape != (len(z), self.d, self.q):
            raise ShapeError(f"dg returned shape {analytic.shape}, expected {(len(z), self.d, self.q)}")
        step = 1e-5 * max(1.0, float(np.max(np.abs(omega))))
        numeric = np.empty_like(analytic)
        for k in range(self.d):
            e = np.zeros(self.d)
            e[k] = step
            numeric[:, k, :] = (self.g(omega + e, z) - self.g(omega - e, z)) / (2 * step)
        scale = np.maximum(np.abs(analytic), 1.0)
        worst = float(np.max(np.abs(analytic - numeric) / scale))
        if worst > rtol:
            raise NumericalError(f"dg disagrees with finite differences (max rel. error {worst:.3g})")
        return worst


@dataclass(frozen=True)
class NuisanceSet:
    """Evaluable nuisance functions ``(h, j, m)``.

    ``h`` and ``m`` map ``(N, d_x)`` inputs to ``(N, q)``; ``j`` maps to
    ``(N, d, q)``.
    """

    h: Callable[[np.ndarray], np.ndarray]
    j: Callable[[np.ndarray], np.ndarray]
    m: Callable[[np.ndarray], np.ndarray]

    def evaluate(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        x = _as_2d(x, "x")
        return self.h(x), self.j(x), self.m(x)


@dataclass(frozen=True)
class FoldSplit:
    fold1_indices: np.ndarray
    fold2_indices: np.ndarray

    def folds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.fold1_indices, self.fold2_indices

    def swapped(self) -> "FoldSplit":
        return FoldSplit(self.fold2_indices, self.fold1_indices)


def split_folds(data: Dataset | int, seed) -> FoldSplit:
    """Seeded shuffle followed by contiguous halves.

    For odd ``N`` the second fold receives the extra index. ``data`` may also
    be the sample size itself.
    """
    n = data if isinstance(data, (int, np.integer)) else len(data)
    if n < 4:
        raise SizingError(f"need at least 4 observations to cross-fit, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    half = n // 2
    return FoldSplit(np.sort(perm[:half]), np.sort(perm[half:]))


def validate_dataset(data: Dataset) -> None:
    """Raise if any entry is non-finite; names the first offending row."""
    for name in ("x", "y", "z"):
        block = getattr(data, name)
        bad = ~np.all(np.isfinite(block), axis=1)
        if bad.any():
            raise DataError(f"observation {int(np.argmax(bad))} has a non-finite entry in {name}")


def read_csv(path: str | Path) -> Dataset:
    """Load a dataset whose header names columns ``x0.., y0.., z0..``."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: file is empty") from None
        blocks: dict[str, list[int]] = {"x": [], "y": [], "z": []}
        for col, name in enumerate(header):
            prefix, digits = name[:1], name[1:]
            if prefix not in blocks or not digits.isdigit():
                raise DataError(f"{path}: unexpected column name {name!r}")
            blocks[prefix].append((int(digits), col))
        for prefix, cols in blocks.items():
            if not cols:
                raise DataError(f"{path}: no {prefix} columns")
            if sorted(i for i, _ in cols) != list(range(len(cols))):
                raise DataError(f"{path}: {prefix} columns must be numbered 0..{len(cols) - 1}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ShapeError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise SizingError(f"{path}: no observations")
    table = np.array(rows)
    parts = [table[:, [c for _, c in sorted(blocks[p])]] for p in ("x", "y", "z")]
    data = Dataset(*parts)
    validate_dataset(data)
    return data


def write_csv(data: Dataset, path: str | Path) -> None:
    dx, q, dz = data.dims
    header = [f"x{i}" for i in range(dx)] + [f"y{i}" for i in range(q)] + [f"z{i}" for i in range(dz)]
    table = np.hstack([data.x, data.y, data.z])
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows([repr(float(v)) for v in row] for row in table)

"""Feature maps and ridge-regression nuisance learners."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import linalg

from .core import Dataset, ShapeError, SizingError, StructuralModel, check_omega

FEATURE_KINDS = ("fourier_sum", "observable_sa", "rff_gaussian", "custom_basis")


class ConditionWarning(RuntimeWarning):
    """Ridge system was singular and solved in the minimum-norm sense."""


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """A deterministic basis expansion of the covariates.

    ``fourier_sum`` works on ``s = sum_j x_j`` and emits
    ``[1, sin(s), cos(s), ..., sin(F s), cos(F s)]``. ``observable_sa`` expects
    ``x = (S, A)`` and emits ``[1, S, S^2, sin S, cos S, A, A S, A sin S,
    A cos S]``. ``rff_gaussian`` draws its frequencies once, from ``seed``, at
    construction. ``custom_basis`` evaluates ``basis`` column by column.
    """

    kind: str
    frequencies: int = 8
    bandwidth: float = 1.0
    n_features: int = 256
    seed: int = 0
    input_dim: Optional[int] = None
    basis: tuple[Callable[[np.ndarray], np.ndarray], ...] = ()
    includes_intercept: bool = True
    _w: Optional[np.ndarray] = field(default=None, repr=False)
    _b: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise ValueError(f"unknown feature map kind {self.kind!r}")
        if self.kind == "observable_sa" and self.input_dim not in (None, 2):
            raise ShapeError("observable_sa maps (S, A) pairs; input_dim must be 2")
        if self.kind == "rff_gaussian":
            if self.input_dim is None:
                raise ValueError("rff_gaussian needs input_dim")
            if self.bandwidth <= 0 or self.n_features < 1:
                raise ValueError("rff_gaussian needs bandwidth > 0 and n_features >= 1")
            rng = np.random.default_rng(self.seed)
            w = rng.standard_normal((self.input_dim, self.n_features)) / self.bandwidth
            b = rng.uniform(0.0, 2 * np.pi, self.n_features)
            object.__setattr__(self, "_w", w)
            object.__setattr__(self, "_b", b)
            object.__setattr__(self, "includes_intercept", False)
        if self.kind == "custom_basis" and not self.basis:
            raise ValueError("custom_basis needs a non-empty basis")

    @classmethod
    def fourier_sum(cls, frequencies: int = 8, input_dim: Optional[int] = None) -> "FeatureMap":
        return cls("fourier_sum", frequencies=frequencies, input_dim=input_dim)

    @classmethod
    def observable_sa(cls) -> "FeatureMap":
        return cls("observable_sa", input_dim=2)

    @classmethod
    def rff_gaussian(cls, input_dim: int, n_features: int, bandwidth: float, seed: int = 0) -> "FeatureMap":
        return cls("rff_gaussian", input_dim=input_dim, n_features=n_features, bandwidth=bandwidth, seed=seed)

    @classmethod
    def linear(cls, input_dim: int) -> "FeatureMap":
        """Intercept plus the raw coordinates, as a custom basis."""
        basis = (_Constant(),) + tuple(_Coordinate(i) for i in range(input_dim))
        return cls("custom_basis", input_dim=input_dim, basis=basis)

    @property
    def dim(self) -> int:
        if self.kind == "fourier_sum":
            return 2 * self.frequencies + int(self.includes_intercept)
        if self.kind == "observable_sa":
            return 9
        if self.kind == "rff_gaussian":
            return self.n_features
        return len(self.basis)

    def __call__(self, x) -> np.ndarray:
        return features(self, x)


class _Constant:
    def __call__(self, x):
        return np.ones(len(x))


@dataclass(frozen=True)
class _Coordinate:
    index: int

    def __call__(self, x):
        return x[:, self.index]


def features(fmap: FeatureMap, x) -> np.ndarray:
    """Evaluate ``fmap`` at one point (1-d input) or at rows of a matrix."""
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    x2 = arr[None, :] if single else arr
    if x2.ndim != 2:
        raise ShapeError(f"features expects a vector or a matrix, got shape {arr.shape}")
    if fmap.input_dim is not None and x2.shape[1] != fmap.input_dim:
        raise ShapeError(f"feature map expects input dimension {fmap.input_dim}, got {x2.shape[1]}")

    if fmap.kind == "fourier_sum":
        s = x2.sum(axis=1)
        ell = np.arange(1, fmap.frequencies + 1)
        arg = s[:, None] * ell[None, :]
        cols = np.empty((len(s), 2 * fmap.frequencies))
        cols[:, 0::2] = np.sin(arg)
        cols[:, 1::2] = np.cos(arg)
        out = np.hstack([np.ones((len(s), 1)), cols]) if fmap.includes_intercept else cols
    elif fmap.kind == "observable_sa":
        if x2.shape[1] != 2:
            raise ShapeError(f"observable_sa expects (S, A) pairs, got dimension {x2.shape[1]}")
        s, a = x2[:, 0], x2[:, 1]
        sin_s, cos_s = np.sin(s), np.cos(s)
        out = np.column_stack([np.ones_like(s), s, s**2, sin_s, cos_s, a, a * s, a * sin_s, a * cos_s])
    elif fmap.kind == "rff_gaussian":
        out = np.sqrt(2.0 / fmap.n_features) * np.cos(x2 @ fmap._w + fmap._b)
    else:
        out = np.column_stack([np.asarray(f(x2), dtype=float) for f in fmap.basis])
    return out[0] if single else out


class RidgeSolver:
    """Factor ``Phi^T Phi + lam * n * Lambda`` once, then solve for many targets.

    ``Lambda`` is the identity with a zero in position 0 when
    ``intercept_unpenalized`` is set (column 0 must then be the intercept).
    """

    def __init__(self, design: np.ndarray, lam: float, intercept_unpenalized: bool = True):
        design = np.asarray(design, dtype=float)
        if design.ndim != 2 or len(design) < 1:
            raise SizingError("ridge design must be a non-empty matrix")
        if lam < 0:
            raise ValueError("ridge penalty must be nonnegative")
        self.design = design
        self.lam = float(lam)
        n, p = design.shape
        penalty = np.full(p, self.lam * n)
        if intercept_unpenalized:
            penalty[0] = 0.0
        self.gram = design.T @ design + np.diag(penalty)
        self._chol = None
        # Unpenalized systems can be singular without Cholesky noticing.
        if self.lam > 0 or np.linalg.cond(self.gram) < 1e12:
            try:
                self._chol = linalg.cho_factor(self.gram, check_finite=False)
            except linalg.LinAlgError:
                self._chol = None
        if self._chol is None:
            warnings.warn(
                f"ridge system with lambda={self.lam:g} is singular; using the minimum-norm solution",
                ConditionWarning,
                stacklevel=2,
            )

    def solve(self, targets: np.ndarray) -> np.ndarray:
        targets = np.asarray(targets, dtype=float)
        vec = targets.ndim == 1
        t2 = targets[:, None] if vec else targets
        if len(t2) != len(self.design):
            raise ShapeError(f"targets have {len(t2)} rows, design has {len(self.design)}")
        if self._chol is not None:
            beta = linalg.cho_solve(self._chol, self.design.T @ t2, check_finite=False)
        else:
            beta = linalg.lstsq(self.gram, self.design.T @ t2, lapack_driver="gelsd")[0]
        return beta[:, 0] if vec else beta


@dataclass(frozen=True)
class RidgeModel:
    coefficients: np.ndarray
    feature_map: Optional[FeatureMap]
    lam: float

    def predict(self, x) -> np.ndarray:
        if self.feature_map is None:
            raise ValueError("model was fit on a raw design; multiply features by coefficients directly")
        return features(self.feature_map, x) @ self.coefficients


def ridge_fit(
    design,
    targets,
    lam: float,
    intercept_unpenalized: bool = True,
    feature_map: Optional[FeatureMap] = None,
) -> RidgeModel:
    """Ridge regression of (possibly many) target columns on a design matrix."""
    beta = RidgeSolver(design, lam, intercept_unpenalized).solve(targets)
    return RidgeModel(np.atleast_2d(beta.T).T, feature_map, float(lam))


@dataclass(frozen=True)
class Learner:
    """Feasible nuisance learner: ridge regression on a fixed feature map."""

    feature_map: FeatureMap
    ridge_lambda: float = 1e-6
    intercept_unpenalized: bool = True


class RidgeNuisances:
    """Fitted ``(h, j, m)`` sharing one feature map; matches :class:`NuisanceSet`."""

    def __init__(self, feature_map: FeatureMap, coef_h, coef_j, coef_m, d: int, q: int):
        self.feature_map = feature_map
        self.coef_h, self.coef_j, self.coef_m = coef_h, coef_j, coef_m
        self.d, self.q = d, q

    def h(self, x):
        return features(self.feature_map, x) @ self.coef_h

    def j(self, x):
        phi = features(self.feature_map, x)
        return (phi @ self.coef_j).reshape(len(phi), self.d, self.q)

    def m(self, x):
        return features(self.feature_map, x) @ self.coef_m

    def evaluate(self, x):
        phi = features(self.feature_map, x)
        return (
            phi @ self.coef_h,
            (phi @ self.coef_j).reshape(len(phi), self.d, self.q),
            phi @ self.coef_m,
        )

    def evaluate_features(self, phi: np.ndarray):
        """Same as :meth:`evaluate` for a precomputed feature matrix."""
        return (
            phi @ self.coef_h,
            (phi @ self.coef_j).reshape(len(phi), self.d, self.q),
            phi @ self.coef_m,
        )


class NuisanceLearner:
    """Nuisance regressions on one training slice, reusable across ``omega``.

    The ridge system depends only on the covariates, so it is factored once;
    ``m`` does not depend on ``omega`` and is fit at construction.
    """

    def __init__(self, train: Dataset, model: StructuralModel, learner: Learner):
        if len(train) < 1:
            raise SizingError("training slice is empty")
        self.train = train
        self.model = model
        self.learner = learner
        design = features(learner.feature_map, train.x)
        self.solver = RidgeSolver(design, learner.ridge_lambda, learner.intercept_unpenalized and learner.feature_map.includes_intercept)
        self.coef_m = self.solver.solve(train.y)

    def fit(self, omega) -> RidgeNuisances:
        model = self.model
        omega = check_omega(omega, model.d)
        z = self.train.z
        g = model.g(omega, z)
        dg = model.dg(omega, z).reshape(len(z), model.d * model.q)
        beta = self.solver.solve(np.hstack([g, dg]))
        q = model.q
        return RidgeNuisances(self.learner.feature_map, beta[:, :q], beta[:, q:], self.coef_m, model.d, q)


def fit_nuisances(
    train: Dataset,
    model: StructuralModel,
    omega,
    feature_map: FeatureMap,
    lam: float = 1e-6,
) -> RidgeNuisances:
    """Fit ``h_omega``, ``j_omega`` and ``m`` by ridge regression on ``train``."""
    return NuisanceLearner(train, model, Learner(feature_map, lam)).fit(omega)


def l2_norm(values: np.ndarray, weights: Optional[np.ndarray] = None) -> float:
    """``L2(P_X)`` norm of a function sampled at evaluation points.

    ``values`` has the evaluation points on axis 0; remaining axes are summed.
    """
    sq = np.asarray(values).reshape(len(values), -1)
    per_point = np.sum(sq**2, axis=1)
    if weights is None:
        return float(np.sqrt(per_point.mean()))
    return float(np.sqrt(np.dot(weights, per_point) / np.sum(weights)))


def nuisance_errors(eta, oracle, x_eval: np.ndarray, oracle_values=None) -> dict[str, float]:
    """``L2(P_X)`` errors of ``eta`` against ``oracle`` and the product proxy.

    ``oracle_values`` may carry a precomputed ``oracle.evaluate(x_eval)``.
    """
    h, j, m = eta.evaluate(x_eval)
    hs, js, ms = oracle.evaluate(x_eval) if oracle_values is None else oracle_values
    eh, ej, em = l2_norm(h - hs), l2_norm(j - js), l2_norm(m - ms)
    return {"h": eh, "j": ej, "m": em, "product": ej * (eh + em)}

"""Orthogonal and plug-in gradient estimators, Wald intervals and bias diagnostics."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import linalg, special

from .core import (
    Dataset,
    FoldSplit,
    NumericalError,
    ObigradError,
    Observation,
    ShapeError,
    StructuralModel,
    check_omega,
    split_folds,
)
from .nuisance import Learner, NuisanceLearner, features

METHODS = ("plugin", "plugin_crossfit", "obigrad", "oracle_dr", "kbo")
_ALIASES = {"oracle": "oracle_dr", "dr": "obigrad", "pi": "plugin"}


def canonical_method(name: str) -> str:
    name = _ALIASES.get(name, name)
    if name not in METHODS:
        raise ValueError(f"unknown estimator {name!r}; expected one of {METHODS}")
    return name


@dataclass(frozen=True)
class GradientReport:
    """A gradient estimate with its covariance and coordinate-wise intervals."""

    method: str
    omega: np.ndarray
    psi_hat: np.ndarray
    sigma_hat: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    alpha: float
    n_total: int
    seed: Optional[int] = None

    @property
    def standard_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.sigma_hat) / self.n_total)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "omega": self.omega.tolist(),
            "psi_hat": self.psi_hat.tolist(),
            "sigma_hat": self.sigma_hat.tolist(),
            "ci_lower": self.ci_lower.tolist(),
            "ci_upper": self.ci_upper.tolist(),
            "alpha": self.alpha,
            "n_total": self.n_total,
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def normal_quantile(p: float) -> float:
    """Inverse standard normal CDF."""
    if not 0.0 < p < 1.0:
        raise ValueError("quantile level must lie strictly between 0 and 1")
    return float(special.ndtri(p))


def wald_ci(psi_hat, sigma_hat, n_total: int, alpha: float = 0.05) -> tuple[np.ndarray, np.ndarray]:
    """Coordinate-wise ``psi_k -/+ z_{1-alpha/2} sqrt(sigma_kk / N)``."""
    psi_hat = np.atleast_1d(np.asarray(psi_hat, dtype=float))
    var = np.diag(np.atleast_2d(np.asarray(sigma_hat, dtype=float))).copy()
    if var.shape != psi_hat.shape:
        raise ShapeError(f"sigma_hat diagonal has {var.size} entries, psi_hat has {psi_hat.size}")
    if np.any(var < -1e-12):
        raise NumericalError(f"covariance has a negative diagonal entry ({var.min():.3g})")
    if np.any(var < 0):
        warnings.warn("clipping tiny negative variances to zero", RuntimeWarning, stacklevel=2)
        var = np.maximum(var, 0.0)
    half = normal_quantile(1.0 - alpha / 2.0) * np.sqrt(var / n_total)
    return psi_hat - half, psi_hat + half


def _report(method, omega, psi, sigma, n_total, alpha, seed) -> GradientReport:
    lower, upper = wald_ci(psi, sigma, n_total, alpha)
    return GradientReport(method, np.asarray(omega, dtype=float), psi, sigma, lower, upper, alpha, int(n_total), seed)


def _dr_scores(y, g, dg, h, j, m) -> np.ndarray:
    resid = m - h
    return (
        -np.einsum("nq,ndq->nd", y - g, j)
        - np.einsum("ndq,nq->nd", dg, resid)
        + np.einsum("ndq,nq->nd", j, resid)
    )


def _plugin_scores(y, h, j) -> np.ndarray:
    return np.einsum("nq,ndq->nd", h - y, j)


def _as_dataset(o) -> tuple[Dataset, bool]:
    if isinstance(o, Dataset):
        return o, False
    if isinstance(o, Observation):
        return Dataset(*(np.atleast_1d(np.asarray(v, dtype=float))[None, :] for v in o)), True
    raise TypeError("expected an Observation or a Dataset")


def _check_nuisances(h, j, m, n, d, q):
    if h.shape != (n, q) or m.shape != (n, q) or j.shape != (n, d, q):
        raise ShapeError(
            f"nuisance shapes h{h.shape}, j{j.shape}, m{m.shape} do not match n={n}, d={d}, q={q}"
        )


def pseudo_outcome(o, eta, model: StructuralModel, omega) -> np.ndarray:
    """Orthogonal score of each observation; ``(N, d)`` for a dataset, ``(d,)`` for one observation."""
    data, single = _as_dataset(o)
    omega = check_omega(omega, model.d)
    h, j, m = eta.evaluate(data.x)
    _check_nuisances(h, j, m, len(data), model.d, data.y.shape[1])
    out = _dr_scores(data.y, model.g(omega, data.z), model.dg(omega, data.z), h, j, m)
    return out[0] if single else out


def plugin_score(o, eta) -> np.ndarray:
    """Plug-in score ``<h(X) - Y, j_k(X)>`` of each observation."""
    data, single = _as_dataset(o)
    h, j, _ = eta.evaluate(data.x)
    out = _plugin_scores(data.y, h, j)
    return out[0] if single else out


def pooled_covariance(fold_scores: Sequence[np.ndarray], center: np.ndarray) -> np.ndarray:
    """Equal-weight average over folds of the empirical second moment about ``center``."""
    sigma = np.zeros((len(center), len(center)))
    for s in fold_scores:
        c = s - center
        sigma += c.T @ c / len(c)
    sigma /= len(fold_scores)
    return 0.5 * (sigma + sigma.T)


_CROSS_FIT = ("obigrad", "plugin", "plugin_crossfit")


def _score_folds(method: str) -> tuple[int, ...]:
    # The plug-in baseline is a single sample split: train on fold 1, score fold 2.
    return (1,) if method == "plugin" else (0, 1)


class CrossFitter:
    """Two-fold cross-fitting with folds and fold regressions frozen across ``omega``.

    Fold ``r`` is scored with nuisances trained on the other fold, so the
    scores of fold 2 use nuisances trained on fold 1 alone.
    """

    def __init__(
        self,
        data: Dataset,
        model: StructuralModel,
        learner: Learner,
        seed: Optional[int] = None,
        folds: Optional[FoldSplit] = None,
    ):
        if folds is None:
            folds = split_folds(data, seed)
        self.data = data
        self.model = model
        self.learner = learner
        self.seed = seed
        self.folds = folds
        self._eval = folds.folds()
        self._learners = []
        self._features = []
        for r, idx in enumerate(self._eval):
            train_idx = self._eval[1 - r]
            try:
                self._learners.append(NuisanceLearner(data.subset(train_idx), model, learner))
            except (ObigradError, linalg.LinAlgError) as exc:
                raise NumericalError(f"nuisance fit on fold {2 - r} failed: {exc}") from exc
            self._features.append(features(learner.feature_map, data.x[idx]))

    def nuisances(self, omega, fold: int):
        """Nuisances used to score fold ``fold`` (0 or 1), trained on the other fold."""
        try:
            return self._learners[fold].fit(omega)
        except (ObigradError, linalg.LinAlgError) as exc:
            raise NumericalError(f"nuisance fit on fold {2 - fold} failed: {exc}") from exc

    def fold_scores(self, omega, method: str = "obigrad", folds: Sequence[int] = (0, 1)) -> list[np.ndarray]:
        method = canonical_method(method)
        if method not in _CROSS_FIT:
            raise ValueError(f"cross-fitting supports {', '.join(_CROSS_FIT)}, not {method}")
        omega = check_omega(omega, self.model.d)
        out = []
        for r in folds:
            idx = self._eval[r]
            h, j, m = self.nuisances(omega, r).evaluate_features(self._features[r])
            y = self.data.y[idx]
            if method == "obigrad":
                z = self.data.z[idx]
                out.append(_dr_scores(y, self.model.g(omega, z), self.model.dg(omega, z), h, j, m))
            else:
                out.append(_plugin_scores(y, h, j))
        return out

    def estimate(self, omega, method: str = "obigrad", alpha: float = 0.05) -> GradientReport:
        """``plugin`` uses one split; ``obigrad`` and ``plugin_crossfit`` average both folds."""
        method = canonical_method(method)
        scores = self.fold_scores(omega, method, _score_folds(method))
        psi = np.mean([s.mean(axis=0) for s in scores], axis=0)
        sigma = pooled_covariance(scores, psi)
        return _report(method, omega, psi, sigma, sum(len(s) for s in scores), alpha, self.seed)

    def gradient(self, omega, method: str = "obigrad") -> np.ndarray:
        method = canonical_method(method)
        scores = self.fold_scores(omega, method, _score_folds(method))
        return np.mean([s.mean(axis=0) for s in scores], axis=0)

    def one_fold(self, omega, method: str = "obigrad") -> np.ndarray:
        """Train on fold 1, average the score over fold 2."""
        return self.fold_scores(omega, method, folds=(1,))[0].mean(axis=0)


class OracleScorer:
    """Full-sample scores at known nuisances; ``oracle`` maps ``omega`` to a nuisance set."""

    def __init__(self, data: Dataset, model: StructuralModel, oracle, seed: Optional[int] = None):
        self.data, self.model, self.oracle, self.seed = data, model, oracle, seed

    def gradient(self, omega, method: str = "oracle_dr") -> np.ndarray:
        return pseudo_outcome(self.data, self.oracle(omega), self.model, omega).mean(axis=0)

    def estimate(self, omega, method: str = "oracle_dr", alpha: float = 0.05) -> GradientReport:
        return oracle_dr_estimate(self.data, self.model, omega, self.oracle(omega), alpha, self.seed)


def dr_estimate(data: Dataset, model: StructuralModel, omega, learner: Learner, seed, alpha: float = 0.05) -> GradientReport:
    """Two-fold cross-fitted orthogonal gradient estimate."""
    return CrossFitter(data, model, learner, seed).estimate(omega, "obigrad", alpha)


def plugin_estimate(
    data: Dataset, model: StructuralModel, omega, learner: Learner, seed, alpha: float = 0.05, crossfit: bool = False
) -> GradientReport:
    """Sample-split plug-in estimate; ``crossfit=True`` averages both fold directions."""
    return CrossFitter(data, model, learner, seed).estimate(omega, "plugin_crossfit" if crossfit else "plugin", alpha)


def oracle_dr_estimate(
    data: Dataset, model: StructuralModel, omega, oracle, alpha: float = 0.05, seed: Optional[int] = None
) -> GradientReport:
    """Orthogonal score averaged over the full sample at known nuisances."""
    scores = pseudo_outcome(data, oracle, model, omega)
    psi = scores.mean(axis=0)
    sigma = pooled_covariance([scores], psi)
    return _report("oracle_dr", omega, psi, sigma, len(data), alpha, seed)


@dataclass(frozen=True)
class BiasDecomposition:
    """Population bias terms of the orthogonal and plug-in scores, per coordinate.

    The orthogonal bias is ``dr_term_hj + dr_term_jm``; the plug-in bias is
    ``plugin_linear_h + plugin_linear_j + plugin_cross``.
    """

    dr_term_hj: np.ndarray
    dr_term_jm: np.ndarray
    plugin_linear_h: np.ndarray
    plugin_linear_j: np.ndarray
    plugin_cross: np.ndarray

    @property
    def dr_total(self) -> np.ndarray:
        return self.dr_term_hj + self.dr_term_jm

    @property
    def plugin_total(self) -> np.ndarray:
        return self.plugin_linear_h + self.plugin_linear_j + self.plugin_cross


def _bias_terms(eta, oracle, x_eval, weights) -> BiasDecomposition:
    x_eval = np.asarray(x_eval, dtype=float)
    h, j, m = eta.evaluate(x_eval)
    hs, js, ms = oracle.evaluate(x_eval)
    if weights is None:
        w = np.full(len(x_eval), 1.0 / len(x_eval))
    else:
        w = np.asarray(weights, dtype=float)
        w = w / w.sum()
    dh, dj, dm = h - hs, j - js, m - ms

    def mean_inner(a, b):
        return np.einsum("n,ndq,nq->d", w, a, b)

    return BiasDecomposition(
        dr_term_hj=-mean_inner(dj, dh),
        dr_term_jm=mean_inner(dj, dm),
        plugin_linear_h=mean_inner(js, dh),
        plugin_linear_j=mean_inner(dj, hs - ms),
        plugin_cross=mean_inner(dj, dh),
    )


def dr_population_bias(eta, oracle, x_eval, weights=None) -> BiasDecomposition:
    """Population bias of the orthogonal score at fixed nuisances ``eta``.

    Expectations over ``X`` are sample averages over ``x_eval``, or exact sums
    when ``weights`` gives the probability of each support point.
    """
    return _bias_terms(eta, oracle, x_eval, weights)


def plugin_bias_decomposition(eta, oracle, x_eval, weights=None) -> BiasDecomposition:
    """Exact three-term bias of the plug-in score at fixed nuisances ``eta``."""
    return _bias_terms(eta, oracle, x_eval, weights)

"""Fixed-penalty kernel bilevel baseline and its regularized population target."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence, Union

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist, pdist

from .core import Dataset, SizingError, StructuralModel, check_omega, split_folds
from .nuisance import FeatureMap, features, ridge_fit

KERNEL_MODES = ("exact_gaussian", "rff")


@dataclass(frozen=True)
class KernelConfig:
    """Gaussian kernel ``exp(-||x - x'||^2 / (2 bandwidth^2))`` with ridge penalty ``lam``.

    ``bandwidth="median"`` resolves to ``sqrt(median ||x_i - x_j||^2 / 2)`` on
    the training covariates.
    """

    mode: str = "exact_gaussian"
    bandwidth: Union[float, str] = 0.5
    lam: float = 1e-3
    rff_features: int = 256
    seed: int = 0
    gram_cap: int = 2000

    def __post_init__(self):
        if self.mode not in KERNEL_MODES:
            raise ValueError(f"unknown kernel mode {self.mode!r}")
        if self.bandwidth != "median" and not float(self.bandwidth) > 0:
            raise ValueError("bandwidth must be positive or 'median'")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.rff_features < 1:
            raise ValueError("rff_features must be at least 1")


def median_bandwidth(x: np.ndarray, max_points: int = 2000) -> float:
    sq = pdist(np.asarray(x, dtype=float)[:max_points], "sqeuclidean")
    return float(np.sqrt(np.median(sq) / 2))


def resolve_bandwidth(cfg: KernelConfig, x: np.ndarray) -> float:
    return median_bandwidth(x) if cfg.bandwidth == "median" else float(cfg.bandwidth)


def gaussian_gram(x1: np.ndarray, x2: np.ndarray, bandwidth: float) -> np.ndarray:
    return np.exp(-cdist(x1, x2, "sqeuclidean") / (2 * bandwidth**2))


class KernelRidgeFit:
    """Kernel ridge fits ``(h_lam, j_lam)`` of ``g`` and ``dg`` on the covariates."""

    def __init__(self, predict, d: int, q: int):
        self._predict, self.d, self.q = predict, d, q

    def evaluate(self, x):
        out = self._predict(np.atleast_2d(np.asarray(x, dtype=float)))
        return out[:, : self.q], out[:, self.q :].reshape(len(out), self.d, self.q)

    def h(self, x):
        return self.evaluate(x)[0]

    def j(self, x):
        return self.evaluate(x)[1]


def _targets(model: StructuralModel, omega, z) -> np.ndarray:
    return np.hstack([model.g(omega, z), model.dg(omega, z).reshape(len(z), model.d * model.q)])


def _rff_map(cfg: KernelConfig, x: np.ndarray) -> FeatureMap:
    return FeatureMap.rff_gaussian(x.shape[1], cfg.rff_features, resolve_bandwidth(cfg, x), cfg.seed)


def kernel_ridge_predictor(x: np.ndarray, targets: np.ndarray, cfg: KernelConfig, enforce_cap: bool = True):
    """Return a function evaluating the kernel ridge fit of ``targets`` on ``x``."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 1:
        raise SizingError("kernel ridge needs at least one training point")
    if cfg.mode == "rff":
        fmap = _rff_map(cfg, x)
        model = ridge_fit(features(fmap, x), targets, cfg.lam, intercept_unpenalized=False, feature_map=fmap)
        return model.predict
    if enforce_cap and n > cfg.gram_cap:
        raise SizingError(
            f"exact Gram solve limited to {cfg.gram_cap} points, got {n}; use mode='rff' for larger samples"
        )
    bw = resolve_bandwidth(cfg, x)
    gram = gaussian_gram(x, x, bw)
    gram[np.diag_indices(n)] += n * cfg.lam
    coef = linalg.cho_solve(linalg.cho_factor(gram, check_finite=False), targets, check_finite=False)
    return lambda new: gaussian_gram(new, x, bw) @ coef


def kbo_fit_inner(train: Dataset, model: StructuralModel, omega, cfg: KernelConfig) -> KernelRidgeFit:
    """Kernel ridge regressions of ``g_omega(Z)`` and ``dg_omega(Z)`` on ``X`` with penalty ``lam``."""
    omega = check_omega(omega, model.d)
    predict = kernel_ridge_predictor(train.x, _targets(model, omega, train.z), cfg)
    return KernelRidgeFit(predict, model.d, model.q)


def kbo_gradient(data: Dataset, model: StructuralModel, omega, cfg: KernelConfig, seed=0) -> np.ndarray:
    """Fit on fold 1 and average ``<h_lam - Y, j_lam>`` over fold 2."""
    folds = split_folds(data, seed)
    fit = kbo_fit_inner(data.subset(folds.fold1_indices), model, omega, cfg)
    ev = data.subset(folds.fold2_indices)
    h, j = fit.evaluate(ev.x)
    return np.einsum("nq,ndq->d", h - ev.y, j) / len(ev)


class KernelPath:
    """Kernel ridge predictions on fixed train/eval covariates for many penalties.

    Exact mode diagonalizes the Gram matrix once; ``predict(targets, lam)``
    then costs two matrix products.
    """

    def __init__(self, x_train: np.ndarray, x_eval: np.ndarray, cfg: KernelConfig, enforce_cap: bool = True):
        self.cfg = cfg
        self.n = len(x_train)
        if cfg.mode == "rff":
            fmap = _rff_map(cfg, x_train)
            self._phi = features(fmap, x_train)
            self._phi_eval = features(fmap, x_eval)
            g = self._phi.T @ self._phi
            self._ev, self._v = linalg.eigh(g)
        else:
            if enforce_cap and self.n > cfg.gram_cap:
                raise SizingError(
                    f"exact Gram solve limited to {cfg.gram_cap} points, got {self.n}; use mode='rff' for larger samples"
                )
            bw = resolve_bandwidth(cfg, x_train)
            self._ev, self._v = linalg.eigh(gaussian_gram(x_train, x_train, bw))
            self._cross = gaussian_gram(x_eval, x_train, bw) @ self._v
        self._ev = np.maximum(self._ev, 0.0)

    def predict(self, targets: np.ndarray, lam: float) -> np.ndarray:
        nl = self.n * lam
        if self.cfg.mode == "rff":
            rhs = self._v.T @ (self._phi.T @ targets)
            beta = self._v @ (rhs / (self._ev + nl)[:, None])
            return self._phi_eval @ beta
        return self._cross @ ((self._v.T @ targets) / (self._ev + nl)[:, None])


def kbo_gradient_path(
    data: Dataset, model: StructuralModel, omega, cfg: KernelConfig, lambdas: Sequence[float], seed=0
) -> np.ndarray:
    """:func:`kbo_gradient` for each penalty in ``lambdas``; returns ``(len(lambdas), d)``."""
    omega = check_omega(omega, model.d)
    folds = split_folds(data, seed)
    tr, ev = data.subset(folds.fold1_indices), data.subset(folds.fold2_indices)
    path = KernelPath(tr.x, ev.x, cfg)
    targets = _targets(model, omega, tr.z)
    out = []
    for lam in lambdas:
        pred = path.predict(targets, lam)
        h, j = pred[:, : model.q], pred[:, model.q :].reshape(len(ev), model.d, model.q)
        out.append(np.einsum("nq,ndq->d", h - ev.y, j) / len(ev))
    return np.array(out)


class RegularizedPopulation:
    """Noiseless kernel ridge smoothing of the analytic nuisances over a large draw.

    The regularized gradient at ``(omega, lam)`` is the in-sample average of
    ``<h_lam - m*, j_lam>`` where ``h_lam`` and ``j_lam`` are kernel ridge
    fits of ``h*_omega`` and ``j*`` on the sampled covariates.
    """

    def __init__(self, truth, cfg: KernelConfig, m_samples: int, seed=0):
        self.truth = truth
        self.x = truth.sample_x(m_samples, seed)
        self.path = KernelPath(self.x, self.x, cfg, enforce_cap=False)
        self.jstar = truth.jstar(self.x)
        self.offset = truth.offset(self.x)
        self.d = self.jstar.shape[1]
        self._smooth = {}

    def _smoothed(self, lam: float):
        # h*_omega = r + J omega is linear in its targets, so smooth r and J once per lam
        if lam not in self._smooth:
            s = self.path.predict(np.column_stack([self.offset, self.jstar]), lam)
            self._smooth[lam] = (s[:, 0], s[:, 1:])
        return self._smooth[lam]

    def target(self, omega, lam: float) -> np.ndarray:
        omega = check_omega(omega, self.d)
        r_l, j_l = self._smoothed(lam)
        h_l = r_l + j_l @ omega
        m = self.offset + self.jstar @ self.truth.omega_star
        return j_l.T @ (h_l - m) / len(self.x)

    def root(self, lam: float) -> np.ndarray:
        """Stationary point of the regularized population gradient."""
        r_l, j_l = self._smoothed(lam)
        m = self.offset + self.jstar @ self.truth.omega_star
        a = j_l.T @ j_l
        b = j_l.T @ (m - r_l)
        return np.linalg.solve(a, b)


def regularized_target(model: StructuralModel, omega, cfg: KernelConfig, truth, m_samples: int = 3000, seed=0) -> np.ndarray:
    """Regularized population gradient at the penalty in ``cfg``."""
    check_omega(omega, model.d)
    return RegularizedPopulation(truth, cfg, m_samples, seed).target(omega, cfg.lam)


def with_lambda(cfg: KernelConfig, lam: float) -> KernelConfig:
    return replace(cfg, lam=lam)

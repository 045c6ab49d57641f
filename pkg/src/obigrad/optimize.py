"""Gradient descent and affine root solving driven by estimated gradients."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .core import Dataset, NumericalError, StructuralModel, check_omega, split_folds
from .estimator import CrossFitter, OracleScorer, canonical_method
from .kbo import KernelConfig, KernelPath
from .nuisance import Learner

DIVERGENCE_NORM = 1e6
MAX_CONDITION = 1e10


@dataclass(frozen=True)
class DescentConfig:
    step_size: float
    max_iters: int = 100
    tolerance: float = 0.0
    omega_init: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step size must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.tolerance < 0:
            raise ValueError("tolerance must be nonnegative")


@dataclass(frozen=True)
class Certificate:
    """Population stationarity bound ``empirical_norm + uniform_error_bound``."""

    empirical_norm: float
    uniform_error_bound: float
    population_bound: float = field(init=False)

    def __post_init__(self):
        if self.uniform_error_bound < 0:
            raise ValueError("uniform error bound must be nonnegative")
        object.__setattr__(self, "population_bound", self.empirical_norm + self.uniform_error_bound)


@dataclass(frozen=True)
class DescentResult:
    omegas: np.ndarray
    gradients: np.ndarray
    converged: bool

    @property
    def omega(self) -> np.ndarray:
        return self.omegas[-1]

    @property
    def iterations(self) -> int:
        return len(self.omegas) - 1

    def write_csv(self, path) -> None:
        write_trajectory(self, path)


class KernelGradient:
    """One-fold kernel baseline as a gradient oracle with frozen folds and Gram factorization."""

    def __init__(self, data: Dataset, model: StructuralModel, cfg: KernelConfig, seed=0):
        folds = split_folds(data, seed)
        self.train, self.eval = data.subset(folds.fold1_indices), data.subset(folds.fold2_indices)
        self.model, self.cfg = model, cfg
        self.path = KernelPath(self.train.x, self.eval.x, cfg)

    def gradient(self, omega, method: str = "kbo") -> np.ndarray:
        model, z = self.model, self.train.z
        omega = check_omega(omega, model.d)
        targets = np.hstack([model.g(omega, z), model.dg(omega, z).reshape(len(z), model.d * model.q)])
        pred = self.path.predict(targets, self.cfg.lam)
        h, j = pred[:, : model.q], pred[:, model.q :].reshape(len(self.eval), model.d, model.q)
        return np.einsum("nq,ndq->d", h - self.eval.y, j) / len(self.eval)


def gradient_oracle(
    data: Dataset,
    model: StructuralModel,
    method: str,
    learner: Optional[Learner] = None,
    seed=0,
    oracle: Optional[Callable] = None,
    kernel: Optional[KernelConfig] = None,
):
    """An object whose ``gradient(omega)`` evaluates the chosen estimator on frozen folds.

    ``oracle`` maps ``omega`` to known nuisances and is required for
    ``oracle_dr``; ``kernel`` is required for ``kbo``.
    """
    method = canonical_method(method)
    if method == "oracle_dr":
        if oracle is None:
            raise ValueError("oracle estimator needs the known nuisances")
        scorer = OracleScorer(data, model, oracle, seed)
    elif method == "kbo":
        if kernel is None:
            raise ValueError("kbo estimator needs a kernel configuration")
        scorer = KernelGradient(data, model, kernel, seed)
    else:
        if learner is None:
            raise ValueError(f"{method} estimator needs a nuisance learner")
        scorer = CrossFitter(data, model, learner, seed)
    return _Bound(scorer, method)


class _Bound:
    def __init__(self, scorer, method):
        self.scorer, self.method = scorer, method

    def __call__(self, omega) -> np.ndarray:
        return self.scorer.gradient(omega, self.method)


def descend(grad: Callable[[np.ndarray], np.ndarray], cfg: DescentConfig, omega_init) -> DescentResult:
    """Fixed-step descent on an arbitrary gradient map."""
    omega = check_omega(omega_init)
    omegas, grads = [omega], []
    converged = False
    for _ in range(cfg.max_iters):
        psi = np.asarray(grad(omega), dtype=float)
        grads.append(psi)
        if np.linalg.norm(psi) <= cfg.tolerance:
            converged = True
            break
        omega = omega - cfg.step_size * psi
        if not np.all(np.isfinite(omega)) or np.linalg.norm(omega) > DIVERGENCE_NORM:
            raise NumericalError(f"descent diverged at iteration {len(grads)} (|omega| > {DIVERGENCE_NORM:g})")
        omegas.append(omega)
    if not converged:
        psi = np.asarray(grad(omega), dtype=float)
        grads.append(psi)
        converged = bool(np.linalg.norm(psi) <= cfg.tolerance)
    return DescentResult(np.array(omegas), np.array(grads), converged)


def gradient_descent(
    data: Dataset,
    model: StructuralModel,
    cfg: DescentConfig,
    method: str = "obigrad",
    learner: Optional[Learner] = None,
    seed=0,
    oracle: Optional[Callable] = None,
    kernel: Optional[KernelConfig] = None,
) -> DescentResult:
    """Descend along the estimated gradient, refitting ``omega``-dependent nuisances each step."""
    grad = gradient_oracle(data, model, method, learner, seed, oracle, kernel)
    start = np.zeros(model.d) if cfg.omega_init is None else cfg.omega_init
    return descend(grad, cfg, check_omega(start, model.d))


def solve_affine(grad: Callable[[np.ndarray], np.ndarray], d: int, base=None) -> np.ndarray:
    """Root of an affine gradient map assembled from ``d + 1`` probes at ``base`` and ``base + e_k``."""
    base = np.zeros(d) if base is None else check_omega(base, d)
    g0 = np.asarray(grad(base), dtype=float)
    a = np.empty((d, d))
    for k in range(d):
        e = np.zeros(d)
        e[k] = 1.0
        a[:, k] = np.asarray(grad(base + e), dtype=float) - g0
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise NumericalError(f"affine gradient map is ill-conditioned (condition number {cond:.3g})")
    b = g0 - a @ base
    return np.linalg.solve(a, -b)


def affine_root_solve(
    data: Dataset,
    model: StructuralModel,
    method: str = "obigrad",
    learner: Optional[Learner] = None,
    seed=0,
    oracle: Optional[Callable] = None,
    kernel: Optional[KernelConfig] = None,
    base=None,
) -> np.ndarray:
    """Solve the estimated gradient equation directly for a model affine in ``omega``."""
    if not model.affine:
        raise ValueError("affine_root_solve requires a model whose g is affine in omega")
    grad = gradient_oracle(data, model, method, learner, seed, oracle, kernel)
    return solve_affine(grad, model.d, base)


def stationarity_certificate(
    omega_hat,
    data: Dataset,
    model: StructuralModel,
    s_n: float,
    method: str = "obigrad",
    learner: Optional[Learner] = None,
    seed=0,
    oracle: Optional[Callable] = None,
    kernel: Optional[KernelConfig] = None,
) -> Certificate:
    """Bound the population gradient norm at ``omega_hat`` by ``||grad_hat|| + s_n``."""
    grad = gradient_oracle(data, model, method, learner, seed, oracle, kernel)
    tau = float(np.linalg.norm(grad(check_omega(omega_hat, model.d))))
    return Certificate(tau, float(s_n))


def write_trajectory(result: DescentResult, path) -> None:
    path = Path(path)
    d = result.omegas.shape[1]
    header = ["iter"] + [f"omega{k}" for k in range(d)] + [f"psi_hat{k}" for k in range(d)] + ["psi_hat_norm"]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t, (om, g) in enumerate(zip(result.omegas, result.gradients)):
            w.writerow([t] + [f"{v:.6g}" for v in om] + [f"{v:.6g}" for v in g] + [f"{np.linalg.norm(g):.6g}"])

"""Synthetic designs with analytic nuisances and closed-form gradients.

Two families are provided. In the instrumental-variable family ``X`` is
Gaussian, ``Z = 2 sum(X) + eta`` and ``g`` is a sine (vector) or linear
(scalar) map of ``Z``. In the fitted-Q family ``X = (S, A)``,
``Z = (S, A, R, S')`` and ``g`` is a Bellman target with continuation value
``omega^T phi(S')``. In both, ``h*`` and ``m*`` are affine in the parameter,
so the population gradient is ``M (omega - omega*)`` for an explicit ``M``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.special import expit

from .core import Dataset, StructuralModel, check_omega
from .nuisance import FeatureMap, Learner

DESIGN_NAMES = (
    "iv_gradient",
    "iv_wald",
    "iv_kbo",
    "iv_root",
    "fqe_gradient",
    "fqe_wald",
    "fqe_root",
    "fqe_kbo",
)


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def shifted_point(omega_star, direction, radius: float = 0.35) -> np.ndarray:
    """``omega_star + radius * direction / ||direction||``."""
    u = np.asarray(direction, dtype=float)
    return np.asarray(omega_star, dtype=float) + radius * u / np.linalg.norm(u)


class AffineOracle:
    """Known nuisances ``h = r + J^T omega``, ``j = J``, ``m = r + J^T omega_star``.

    ``jstar(x)`` returns ``(N, d)`` and ``offset(x)`` returns ``(N,)``.
    """

    def __init__(self, jstar, offset, omega, omega_star):
        self.jstar, self.offset = jstar, offset
        self.omega = np.asarray(omega, dtype=float)
        self.omega_star = np.asarray(omega_star, dtype=float)

    def evaluate(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        jm = self.jstar(x)
        r = self.offset(x)
        return (r + jm @ self.omega)[:, None], jm[:, :, None], (r + jm @ self.omega_star)[:, None]

    def h(self, x):
        return self.evaluate(x)[0]

    def j(self, x):
        return self.evaluate(x)[1]

    def m(self, x):
        return self.evaluate(x)[2]


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Population gradient ``matrix @ (omega - omega_star)`` and the oracle nuisances."""

    matrix: np.ndarray
    omega_star: np.ndarray
    jstar: Callable[[np.ndarray], np.ndarray]
    offset: Callable[[np.ndarray], np.ndarray]
    sample_x: Callable[[int, object], np.ndarray]

    def psi(self, omega) -> np.ndarray:
        return self.matrix @ (check_omega(omega, len(self.omega_star)) - self.omega_star)

    def oracle_nuisances(self, omega) -> AffineOracle:
        return AffineOracle(self.jstar, self.offset, check_omega(omega, len(self.omega_star)), self.omega_star)

    def objective(self, omega) -> float:
        """Outer loss up to a constant; its gradient is :meth:`psi`."""
        e = check_omega(omega, len(self.omega_star)) - self.omega_star
        return 0.5 * float(e @ self.matrix @ e)


class _Zero:
    def __call__(self, x):
        return np.zeros(len(x))


# Instrumental-variable designs

class SineFeatures:
    """``g(omega, z) = sum_l omega_l sin(z + l)`` for scalar ``z``."""

    def __init__(self, d: int):
        self.d = d

    def basis(self, z):
        return np.sin(np.asarray(z, dtype=float).reshape(-1, 1) + np.arange(1, self.d + 1))

    def g(self, omega, z):
        return (self.basis(z) @ omega)[:, None]

    def dg(self, omega, z):
        return self.basis(z)[:, :, None]


class LinearInstrument:
    """``g(omega, z) = omega z`` for scalar ``z``."""

    def g(self, omega, z):
        return np.asarray(z, dtype=float).reshape(-1, 1) * omega[0]

    def dg(self, omega, z):
        return np.asarray(z, dtype=float).reshape(-1, 1, 1)


@dataclass(frozen=True)
class IvDesign:
    p: int = 3
    d: int = 4
    sigma_z2: float = 0.1
    outcome_noise: str = "independent_gauss"
    y_noise_sd: float = 0.25
    eta_coef: float = 0.5
    direction: tuple[float, ...] = (1.0, 1 / 3, -1 / 3, -1.0)

    def __post_init__(self):
        if self.p < 1 or self.d < 1 or self.sigma_z2 <= 0 or self.y_noise_sd < 0:
            raise ValueError("IV design needs p, d >= 1, sigma_z2 > 0 and y_noise_sd >= 0")
        if self.outcome_noise not in ("independent_gauss", "correlated_eta"):
            raise ValueError(f"unknown outcome noise {self.outcome_noise!r}")

    @property
    def omega_star(self) -> np.ndarray:
        k = np.arange(1, self.d + 1, dtype=float)
        return k / np.linalg.norm(k)

    @property
    def omega0(self) -> np.ndarray:
        return shifted_point(self.omega_star, self.direction)

    def model(self) -> StructuralModel:
        f = SineFeatures(self.d)
        return StructuralModel(f.g, f.dg, d=self.d, q=1, name="iv_sine", affine=True, bounds=(float(np.sqrt(self.d)), 1.0, np.inf))


class _IvJ:
    def __init__(self, d, sigma_z2):
        self.d, self.scale = d, np.exp(-sigma_z2 / 2)

    def __call__(self, x):
        return self.scale * np.sin(2 * x.sum(axis=1, keepdims=True) + np.arange(1, self.d + 1))


class _GaussX:
    def __init__(self, p):
        self.p = p

    def __call__(self, n, seed):
        return _rng(seed).standard_normal((n, self.p))


def iv_sample(design: IvDesign, n: int, seed) -> Dataset:
    rng = _rng(seed)
    x = rng.standard_normal((n, design.p))
    eta = rng.normal(0.0, np.sqrt(design.sigma_z2), n)
    z = 2 * x.sum(axis=1) + eta
    signal = SineFeatures(design.d).basis(z) @ design.omega_star
    if design.outcome_noise == "independent_gauss":
        y = signal + rng.normal(0.0, design.y_noise_sd, n)
    else:
        y = signal + design.eta_coef * eta
    return Dataset(x, y, z)


def iv_matrix(design: IvDesign) -> np.ndarray:
    k = np.arange(1, design.d + 1)
    kk, ll = np.meshgrid(k, k, indexing="ij")
    return np.exp(-design.sigma_z2) / 2 * (np.cos(kk - ll) - np.exp(-8 * design.p) * np.cos(kk + ll))


def iv_ground_truth(design: IvDesign) -> GroundTruth:
    return GroundTruth(iv_matrix(design), design.omega_star, _IvJ(design.d, design.sigma_z2), _Zero(), _GaussX(design.p))


@dataclass(frozen=True)
class IvRootDesign:
    p: int = 3
    sigma_z2: float = 0.1
    omega_star: float = 2.0
    eta_coef: float = 0.5
    y_noise_sd: float = 0.1
    d: int = 1

    def model(self) -> StructuralModel:
        f = LinearInstrument()
        return StructuralModel(f.g, f.dg, d=1, q=1, name="iv_linear", affine=True)


class _IvRootJ:
    def __call__(self, x):
        return 2 * x.sum(axis=1, keepdims=True)


def iv_root_sample(design: IvRootDesign, n: int, seed) -> Dataset:
    rng = _rng(seed)
    x = rng.standard_normal((n, design.p))
    eta = rng.normal(0.0, np.sqrt(design.sigma_z2), n)
    z = 2 * x.sum(axis=1) + eta
    y = design.omega_star * z + design.eta_coef * eta + rng.normal(0.0, design.y_noise_sd, n)
    return Dataset(x, y, z)


def iv_root_design(design: Optional[IvRootDesign] = None) -> tuple[IvRootDesign, GroundTruth]:
    design = IvRootDesign() if design is None else design
    truth = GroundTruth(
        np.array([[4.0 * design.p]]), np.array([design.omega_star]), _IvRootJ(), _Zero(), _GaussX(design.p)
    )
    return design, truth


# Fitted-Q designs

FQE_FEATURES = {"full": 4, "trig": 2}


def continuation_features(kind: str, s_next) -> np.ndarray:
    s = np.asarray(s_next, dtype=float)
    if kind == "full":
        return np.stack([np.sin(s), np.cos(s), s, s**2], axis=-1)
    if kind == "trig":
        return np.stack([np.sin(s), np.cos(s)], axis=-1)
    raise ValueError(f"unknown continuation features {kind!r}")


class BellmanTarget:
    """``g(omega, z) = R + gamma omega^T phi(S')`` with ``z = (S, A, R, S')``."""

    def __init__(self, gamma: float, kind: str):
        self.gamma, self.kind = gamma, kind

    def g(self, omega, z):
        z = np.atleast_2d(z)
        return (z[:, 2] + self.gamma * continuation_features(self.kind, z[:, 3]) @ omega)[:, None]

    def dg(self, omega, z):
        z = np.atleast_2d(z)
        return self.gamma * continuation_features(self.kind, z[:, 3])[:, :, None]


@dataclass(frozen=True)
class FqeDesign:
    rho: float = 0.7
    tau: float = 0.5
    sigma_s: float = 0.2
    gamma: float = 0.8
    features: str = "full"
    omega_star_values: tuple[float, ...] = (0.55, -0.35, 0.25, 0.15)
    policy: str = "bernoulli_half"
    reward_noise_sd: float = 0.1
    y_noise_sd: float = 0.25
    direction: tuple[float, ...] = (1.0, -0.5, 0.35, -0.25)

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.sigma_s <= 0:
            raise ValueError("sigma_s must be positive")
        if self.features not in FQE_FEATURES:
            raise ValueError(f"unknown continuation features {self.features!r}")
        if len(self.omega_star_values) != FQE_FEATURES[self.features]:
            raise ValueError("omega_star has the wrong dimension for the feature map")
        if self.policy not in ("bernoulli_half", "logistic"):
            raise ValueError(f"unknown policy {self.policy!r}")

    @property
    def d(self) -> int:
        return FQE_FEATURES[self.features]

    @property
    def omega_star(self) -> np.ndarray:
        return np.array(self.omega_star_values, dtype=float)

    @property
    def omega0(self) -> np.ndarray:
        return shifted_point(self.omega_star, self.direction[: self.d])

    def propensity(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return np.full_like(s, 0.5) if self.policy == "bernoulli_half" else expit(0.5 * s)

    def model(self) -> StructuralModel:
        f = BellmanTarget(self.gamma, self.features)
        return StructuralModel(f.g, f.dg, d=self.d, q=1, name=f"fqe_{self.features}", affine=True)


def fqe_sample(design: FqeDesign, n: int, seed) -> Dataset:
    rng = _rng(seed)
    s = rng.standard_normal(n)
    a = (rng.uniform(size=n) < design.propensity(s)).astype(float)
    s_next = design.rho * s + design.tau * a + rng.normal(0.0, design.sigma_s, n)
    r = np.sin(s) + 0.5 * a + 0.25 * s * a + rng.normal(0.0, design.reward_noise_sd, n)
    y = r + design.gamma * continuation_features(design.features, s_next) @ design.omega_star
    y = y + rng.normal(0.0, design.y_noise_sd, n)
    return Dataset(np.column_stack([s, a]), y, np.column_stack([s, a, r, s_next]))


def fqe_conditional_features(design: FqeDesign, s, a) -> np.ndarray:
    """``E[gamma phi(S') | S=s, A=a]``; broadcasts over ``s`` and ``a``."""
    mu = design.rho * np.asarray(s, dtype=float) + design.tau * np.asarray(a, dtype=float)
    v = design.sigma_s**2
    damp = np.exp(-v / 2)
    cols = [damp * np.sin(mu), damp * np.cos(mu)]
    if design.features == "full":
        cols += [mu, mu**2 + v]
    return design.gamma * np.stack(cols, axis=-1)


class _FqeJ:
    def __init__(self, design):
        self.design = design

    def __call__(self, x):
        return fqe_conditional_features(self.design, x[:, 0], x[:, 1])


class _FqeReward:
    def __call__(self, x):
        s, a = x[:, 0], x[:, 1]
        return np.sin(s) + 0.5 * a + 0.25 * s * a


class _FqeX:
    def __init__(self, design):
        self.design = design

    def __call__(self, n, seed):
        rng = _rng(seed)
        s = rng.standard_normal(n)
        a = (rng.uniform(size=n) < self.design.propensity(s)).astype(float)
        return np.column_stack([s, a])


def fqe_matrix(design: FqeDesign, nodes: int = 64) -> np.ndarray:
    """``E[j* j*^T]`` by Gauss-Hermite quadrature in ``S`` and exact summation in ``A``."""
    if nodes < 16:
        raise ValueError("use at least 16 quadrature nodes")
    t, w = hermgauss(nodes)
    s = np.sqrt(2.0) * t
    w = w / np.sqrt(np.pi)
    p1 = design.propensity(s)
    out = np.zeros((design.d, design.d))
    for a, pa in ((0.0, 1 - p1), (1.0, p1)):
        jm = fqe_conditional_features(design, s, np.full_like(s, a))
        out += np.einsum("n,nk,nl->kl", w * pa, jm, jm)
    return out


def fqe_ground_truth(design: FqeDesign, quadrature: int = 64) -> GroundTruth:
    return GroundTruth(fqe_matrix(design, quadrature), design.omega_star, _FqeJ(design), _FqeReward(), _FqeX(design))


# Registry

@dataclass(frozen=True, eq=False)
class DesignBundle:
    """Everything an experiment needs to know about a named design."""

    name: str
    kind: str
    params: object
    model: StructuralModel
    truth: GroundTruth
    learner: Learner
    omega_eval: np.ndarray
    kbo_defaults: dict = field(default_factory=dict)

    def sample(self, n: int, seed) -> Dataset:
        if isinstance(self.params, IvDesign):
            return iv_sample(self.params, n, seed)
        if isinstance(self.params, IvRootDesign):
            return iv_root_sample(self.params, n, seed)
        return fqe_sample(self.params, n, seed)


def default_learner(design_name: str) -> Learner:
    if design_name == "iv_root":
        return Learner(FeatureMap.linear(3), 1e-6)
    if design_name.startswith("iv"):
        return Learner(FeatureMap.fourier_sum(8), 1e-6)
    return Learner(FeatureMap.observable_sa(), 1e-6)


def make_design(name: str, learner: Optional[Learner] = None) -> DesignBundle:
    if name not in DESIGN_NAMES:
        raise ValueError(f"unknown design {name!r}; expected one of {DESIGN_NAMES}")
    learner = default_learner(name) if learner is None else learner
    kind = name.split("_", 1)[1]
    kind = "gradient" if kind in ("gradient", "wald") else kind
    if name == "iv_root":
        params, truth = iv_root_design()
        return DesignBundle(name, kind, params, params.model(), truth, learner, np.array([params.omega_star]),
                            {"mode": "exact_gaussian", "bandwidth": "median", "lambdas": (1e-2,), "target_samples": 2500})
    if name.startswith("iv"):
        params = IvDesign(outcome_noise="correlated_eta" if name == "iv_kbo" else "independent_gauss")
        kbo = {"mode": "exact_gaussian", "bandwidth": 0.5, "target_samples": 3000}
        return DesignBundle(name, kind, params, params.model(), iv_ground_truth(params), learner, params.omega0, kbo)
    if name == "fqe_root":
        params = FqeDesign(features="trig", omega_star_values=(0.65, -0.45), y_noise_sd=0.1)
        omega_eval = params.omega_star
    else:
        params = FqeDesign(gamma=0.9, policy="logistic") if name == "fqe_wald" else FqeDesign()
        omega_eval = params.omega0
    kbo = {"mode": "rff", "bandwidth": 0.35, "rff_features": 256, "target_samples": 12000}
    return DesignBundle(name, kind, params, params.model(), fqe_ground_truth(params), learner, omega_eval, kbo)


@lru_cache(maxsize=None)
def cached_design(name: str) -> DesignBundle:
    """:func:`make_design` with default learners, memoized per process."""
    return make_design(name)


MODEL_NAMES = ("iv_sine", "iv_linear", "fqe_full", "fqe_trig")


def get_model(name: str) -> StructuralModel:
    """Structural models by name, for data supplied from outside the package."""
    if name == "iv_sine":
        return IvDesign().model()
    if name == "iv_linear":
        return IvRootDesign().model()
    if name == "fqe_full":
        return FqeDesign().model()
    if name == "fqe_trig":
        return FqeDesign(features="trig", omega_star_values=(0.65, -0.45)).model()
    raise ValueError(f"unknown model {name!r}; expected one of {MODEL_NAMES}")


def default_learner_for_model(name: str, input_dim: int) -> Learner:
    if name == "iv_linear":
        return Learner(FeatureMap.linear(input_dim), 1e-6)
    if name.startswith("iv"):
        return Learner(FeatureMap.fourier_sum(8), 1e-6)
    return Learner(FeatureMap.observable_sa(), 1e-6)

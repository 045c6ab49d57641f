"""Experiment configuration and the flat ``key = value`` config format."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

from ..core import ObigradError
from ..dgp import DESIGN_NAMES, cached_design
from ..kbo import KernelConfig
from ..nuisance import FeatureMap, Learner

WORKERS_ENV = "OBIGRAD_WORKERS"

KBO_GRID = (1e-5, 3e-5, 1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1)


class ConfigError(ObigradError):
    kind = "config_error"


@dataclass(frozen=True)
class ExperimentConfig:
    """One Monte Carlo experiment. Fields left as ``None`` take per-design defaults.

    ``features`` names the nuisance basis (``fourier_sum``, ``observable_sa``,
    ``linear`` or ``rff_gaussian``). ``kbo_decay`` is the ``(c, a)`` of the
    decaying schedule ``lambda_N = c N^-a`` used by the scalar root design.
    """

    design: str
    sample_sizes: tuple[int, ...] = ()
    replications: int = 100
    estimators: tuple[str, ...] = ()
    alpha: float = 0.05
    features: Optional[str] = None
    frequencies: int = 8
    ridge_lambda: float = 1e-6
    rff_features: int = 256
    rff_bandwidth: float = 1.0
    omega: Optional[tuple[float, ...]] = None
    master_seed: int = 0
    output_dir: str = "results"
    eval_samples: int = 100_000
    kbo_lambdas: tuple[float, ...] = ()
    kbo_mode: Optional[str] = None
    kbo_bandwidth: Optional[Union[float, str]] = None
    kbo_features: int = 256
    kbo_target_samples: Optional[int] = None
    kbo_decay: tuple[float, float] = (0.05, 0.6)
    sweep_radius: float = 0.1
    workers: Optional[int] = None

    def __post_init__(self):
        if self.design not in DESIGN_NAMES:
            raise ConfigError(f"unknown design {self.design!r}; expected one of {DESIGN_NAMES}")
        kind = cached_design(self.design).kind
        defaults = _DEFAULTS[kind]
        defaults = {**defaults, **_DESIGN_DEFAULTS.get(self.design, {})}
        for name in ("sample_sizes", "estimators", "kbo_lambdas"):
            if not getattr(self, name):
                object.__setattr__(self, name, tuple(defaults[name]))
        unknown = set(self.estimators) - set(_ESTIMATORS[kind])
        if unknown:
            raise ConfigError(f"estimators {sorted(unknown)} are not available for {self.design}")
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        if any(n < 4 for n in self.sample_sizes):
            raise ConfigError("sample sizes must be at least 4")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.eval_samples < 1:
            raise ConfigError("eval_samples must be positive")

    @property
    def kind(self) -> str:
        return cached_design(self.design).kind

    def learner(self) -> Learner:
        if self.features is None:
            return cached_design(self.design).learner
        input_dim = 2 if self.design.startswith("fqe") else 3
        if self.features == "fourier_sum":
            fmap = FeatureMap.fourier_sum(self.frequencies)
        elif self.features == "observable_sa":
            fmap = FeatureMap.observable_sa()
        elif self.features == "linear":
            fmap = FeatureMap.linear(input_dim)
        elif self.features == "rff_gaussian":
            fmap = FeatureMap.rff_gaussian(input_dim, self.rff_features, self.rff_bandwidth, self.master_seed)
        else:
            raise ConfigError(f"unknown feature map {self.features!r}")
        return Learner(fmap, self.ridge_lambda, intercept_unpenalized=fmap.includes_intercept)

    def kernel(self, lam: Optional[float] = None) -> KernelConfig:
        base = cached_design(self.design).kbo_defaults
        return KernelConfig(
            mode=self.kbo_mode or base.get("mode", "exact_gaussian"),
            bandwidth=self.kbo_bandwidth if self.kbo_bandwidth is not None else base.get("bandwidth", 0.5),
            lam=self.kbo_lambdas[0] if lam is None else lam,
            rff_features=self.kbo_features,
            seed=self.master_seed,
        )

    @property
    def target_samples(self) -> int:
        if self.kbo_target_samples is not None:
            return self.kbo_target_samples
        return cached_design(self.design).kbo_defaults.get("target_samples", 3000)

    def worker_count(self) -> int:
        if self.workers is not None:
            return max(1, self.workers)
        env = os.environ.get(WORKERS_ENV)
        if env:
            try:
                return max(1, int(env))
            except ValueError:
                raise ConfigError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
        return os.cpu_count() or 1

    def with_updates(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


_DEFAULTS = {
    "gradient": {
        "sample_sizes": (200, 400, 800, 1600, 3200),
        "estimators": ("plugin", "obigrad", "oracle_dr"),
        "kbo_lambdas": KBO_GRID,
    },
    "kbo": {
        "sample_sizes": (600,),
        "estimators": ("plugin", "obigrad", "oracle_dr", "kbo"),
        "kbo_lambdas": KBO_GRID,
    },
    "root": {
        "sample_sizes": (200, 400, 800, 1600, 3200),
        "estimators": ("plugin", "obigrad", "oracle_dr"),
        "kbo_lambdas": (1e-2,),
    },
}

_DESIGN_DEFAULTS = {
    "iv_root": {
        "sample_sizes": (100, 200, 400, 800, 1600),
        "estimators": ("plugin", "obigrad", "oracle_dr", "kbo_fixed", "kbo_decay"),
    },
}

_ESTIMATORS = {
    "gradient": ("plugin", "plugin_crossfit", "obigrad", "oracle_dr"),
    "kbo": ("plugin", "plugin_crossfit", "obigrad", "oracle_dr", "kbo"),
    "root": ("plugin", "plugin_crossfit", "obigrad", "oracle_dr", "kbo_fixed", "kbo_decay"),
}


def _parse_value(field: dataclasses.Field, raw: str):
    raw = raw.strip()
    name = field.name
    if raw.lower() in ("", "none"):
        return None
    try:
        if name in ("sample_sizes",):
            return tuple(int(v) for v in raw.split(","))
        if name in ("omega", "kbo_lambdas", "kbo_decay"):
            return tuple(float(v) for v in raw.split(","))
        if name == "estimators":
            return tuple(v.strip() for v in raw.split(",") if v.strip())
        if name == "kbo_bandwidth":
            return raw if raw == "median" else float(raw)
        if name in ("alpha", "ridge_lambda", "rff_bandwidth", "sweep_radius"):
            return float(raw)
        if name in ("replications", "frequencies", "rff_features", "master_seed", "eval_samples",
                    "kbo_features", "kbo_target_samples", "workers"):
            return int(raw)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None
    return raw


def parse_config_text(text: str, defaults: Optional[dict] = None, **overrides) -> ExperimentConfig:
    """Build a config from ``key = value`` lines; ``#`` starts a comment.

    ``defaults`` fill keys the text leaves out; ``overrides`` replace keys it sets.
    """
    fields = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    values = dict(defaults or {})
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in fields:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        value = _parse_value(fields[key], raw)
        if value is not None:
            values[key] = value
    values.update({k: v for k, v in overrides.items() if v is not None})
    if "design" not in values:
        raise ConfigError("config must name a design")
    return ExperimentConfig(**values)


def load_config(path, defaults: Optional[dict] = None, **overrides) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse_config_text(text, defaults, **overrides)


def dump_config(config: ExperimentConfig) -> str:
    lines = []
    for f in dataclasses.fields(config):
        v = getattr(config, f.name)
        if v is None:
            continue
        if isinstance(v, tuple):
            v = ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"

"""
Experiment configuration: dataclasses plus a strict TOML loader.

Unknown keys are fatal and reported with their dotted path, so a typo in a
safety parameter can never fall back silently to a default.
"""

from __future__ import annotations

import dataclasses
import itertools
import json
import sys
import typing
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Union

from .controller import alpha_algo

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "ALGORITHMS",
    "BENCHMARKS",
    "SWEEP_AXES",
    "ConfigError",
    "ControllerParams",
    "SafeOptParams",
    "SyntheticParams",
    "MovieLensParams",
    "SweepAxes",
    "ExperimentConfig",
    "parse_config",
    "config_from_dict",
    "config_to_dict",
]

ALGORITHMS = ("safeopt", "d-safe-bocp", "p-safe-bocp")
BENCHMARKS = ("synthetic", "movielens")
REGIMES = ("well", "mis")
SWEEP_AXES = ("algorithm", "regime", "b_ratio", "alpha", "sigma_q2")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key or constraint."""


@dataclass(frozen=True)
class ControllerParams:
    alpha: float = 0.1
    eta: float = 2.0
    delta_alpha_init: float = 0.0
    delta: float = 0.1


@dataclass(frozen=True)
class SafeOptParams:
    """Fixed-schedule baseline.

    ``B`` overrides ``b_ratio * ||q||``; ``beta`` (a number or ``"INFINITE"``)
    overrides the whole schedule.
    """

    b_ratio: float = 1.0
    B: Optional[float] = None
    delta: float = 0.1
    beta: Optional[Union[float, str]] = None


@dataclass(frozen=True)
class SyntheticParams:
    grid_size: int = 1000
    domain: tuple = (-10.0, 10.0)
    regime: str = "well"
    sigma_f2: float = 2.5e-3
    sigma_q2: float = 0.0
    T: int = 25


@dataclass(frozen=True)
class MovieLensParams:
    """``path=None`` selects the bundled mini-table, or ml-100k under ``full``."""

    path: Optional[str] = None
    n_train: int = 200
    n_test: int = 10
    rank: int = 20
    reg: float = 0.1
    sweeps: int = 50
    split_seed: int = 0
    T: int = 100


@dataclass(frozen=True)
class SweepAxes:
    """Lists of values; the sweep is their Cartesian product (empty axes are fixed)."""

    algorithm: tuple = ()
    regime: tuple = ()
    b_ratio: tuple = ()
    alpha: tuple = ()
    sigma_q2: tuple = ()


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    benchmark: str = "synthetic"
    algorithm: str = "d-safe-bocp"
    seed: int = 0
    replications: int = 200
    full_replications: int = 1000
    full: bool = False
    beta_f: float = 3.0
    out: str = "results"
    jobs: int = 1
    controller: ControllerParams = field(default_factory=ControllerParams)
    safeopt: SafeOptParams = field(default_factory=SafeOptParams)
    synthetic: SyntheticParams = field(default_factory=SyntheticParams)
    movielens: MovieLensParams = field(default_factory=MovieLensParams)
    sweep: SweepAxes = field(default_factory=SweepAxes)

    def __post_init__(self):
        validate(self)

    @property
    def T(self) -> int:
        return self.synthetic.T if self.benchmark == "synthetic" else self.movielens.T

    @property
    def effective_replications(self) -> int:
        return self.full_replications if self.full else self.replications

    def sweep_points(self) -> list:
        """Every sweep point as a dict ``{axis: value}``, in axis-major order."""
        axes = [(a, getattr(self.sweep, a)) for a in SWEEP_AXES if getattr(self.sweep, a)]
        names = [a for a, _ in axes]
        return [dict(zip(names, combo)) for combo in itertools.product(*(v for _, v in axes))]

    def at(self, point: dict) -> "ExperimentConfig":
        """Resolved configuration for one sweep point (its own sweep is empty)."""
        top = {"algorithm": self.algorithm}
        controller, safeopt, synthetic = self.controller, self.safeopt, self.synthetic
        for axis, value in point.items():
            if axis == "algorithm":
                top["algorithm"] = value
            elif axis == "regime":
                synthetic = replace(synthetic, regime=value)
            elif axis == "b_ratio":
                safeopt = replace(safeopt, b_ratio=value)
            elif axis == "alpha":
                controller = replace(controller, alpha=value)
            elif axis == "sigma_q2":
                synthetic = replace(synthetic, sigma_q2=value)
            else:
                raise ConfigError(f"unknown sweep axis {axis!r}")
        return replace(
            self, controller=controller, safeopt=safeopt, synthetic=synthetic,
            sweep=SweepAxes(), **top,
        )

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        """Apply non-None CLI overrides (seed, replications, out, full, jobs)."""
        allowed = {"seed", "replications", "out", "full", "jobs"}
        unknown = set(overrides) - allowed
        if unknown:
            raise ConfigError(f"unknown overrides: {sorted(unknown)}")
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})


def _fail(msg):
    raise ConfigError(msg)


def _check_alpha(alpha, key):
    if not 0 < alpha <= 1:
        _fail(f"{key}={alpha}: target violation rate must lie in (0, 1]")


def _check_point(cfg: ExperimentConfig, where: str):
    c = cfg.controller
    _check_alpha(c.alpha, f"{where}controller.alpha")
    if cfg.algorithm not in ALGORITHMS:
        _fail(f"{where}algorithm={cfg.algorithm!r}: must be one of {list(ALGORITHMS)}")
    s = cfg.synthetic
    if s.regime not in REGIMES:
        _fail(f"{where}synthetic.regime={s.regime!r}: must be one of {list(REGIMES)}")
    if s.sigma_q2 < 0:
        _fail(f"{where}synthetic.sigma_q2={s.sigma_q2}: noise power must be >= 0")
    if not cfg.safeopt.b_ratio > 0:
        _fail(f"{where}safeopt.b_ratio={cfg.safeopt.b_ratio}: must be > 0")
    noisy = cfg.benchmark == "synthetic" and s.sigma_q2 > 0
    if cfg.algorithm == "d-safe-bocp" and noisy:
        _fail(f"{where}d-safe-bocp needs noiseless constraint feedback (synthetic.sigma_q2 = 0)")
    if cfg.algorithm != "safeopt":
        a_algo = alpha_algo(c.alpha, c.eta, cfg.T, c.delta_alpha_init)
        if a_algo < 0:
            _fail(f"{where}controller.alpha={c.alpha}: unattainable over T={cfg.T} with eta={c.eta} "
                  f"(algorithmic target {a_algo:.4g} < 0); need T*alpha >= 1 + (1 - delta_alpha_init)/eta")
    if cfg.algorithm == "p-safe-bocp" and not 0 < c.delta < 1:
        _fail(f"{where}controller.delta={c.delta}: reliability level must lie in (0, 1)")
    if cfg.benchmark == "movielens" and cfg.algorithm == "safeopt" and cfg.safeopt.B is None \
            and cfg.safeopt.beta is None:
        _fail(f"{where}movielens safeopt runs need an absolute safeopt.B")


def validate(cfg: ExperimentConfig):
    if cfg.benchmark not in BENCHMARKS:
        _fail(f"benchmark={cfg.benchmark!r}: must be one of {list(BENCHMARKS)}")
    c = cfg.controller
    if not c.eta > 0:
        _fail(f"controller.eta={c.eta}: learning rate must satisfy eta > 0")
    if not c.delta_alpha_init < 1:
        _fail(f"controller.delta_alpha_init={c.delta_alpha_init}: "
              "initial excess violation rate must satisfy delta_alpha_init < 1")
    if cfg.T < 2:
        _fail(f"{cfg.benchmark}.T={cfg.T}: horizon must satisfy T >= 2")
    if cfg.replications < 0 or cfg.full_replications < 0:
        _fail("replications must be >= 0")
    if cfg.jobs < 1:
        _fail(f"jobs={cfg.jobs}: must be >= 1")
    if cfg.beta_f < 0:
        _fail(f"beta_f={cfg.beta_f}: must be >= 0")
    b = cfg.safeopt
    if b.B is not None and not b.B > 0:
        _fail(f"safeopt.B={b.B}: must be > 0")
    if isinstance(b.beta, str) and b.beta != "INFINITE":
        _fail(f"safeopt.beta={b.beta!r}: must be a number >= 0 or \"INFINITE\"")
    if isinstance(b.beta, (int, float)) and not b.beta >= 0:
        _fail(f"safeopt.beta={b.beta}: must be >= 0")
    if not 0 < b.delta <= 1:
        _fail(f"safeopt.delta={b.delta}: must lie in (0, 1]")
    s = cfg.synthetic
    if s.grid_size < 2:
        _fail(f"synthetic.grid_size={s.grid_size}: must be >= 2")
    if len(s.domain) != 2 or not s.domain[0] < s.domain[1]:
        _fail(f"synthetic.domain={list(s.domain)}: must be [lo, hi] with lo < hi")
    if s.sigma_f2 < 0:
        _fail(f"synthetic.sigma_f2={s.sigma_f2}: noise power must be >= 0")
    m = cfg.movielens
    if m.rank < 1 or m.n_train < 1 or m.n_test < 1 or m.sweeps < 1:
        _fail("movielens.rank, n_train, n_test and sweeps must be >= 1")
    for alpha in cfg.sweep.alpha:
        _check_alpha(alpha, "sweep.alpha[]")
    points = cfg.sweep_points()
    if points == [{}]:
        _check_point(cfg, "")
    else:
        for point in points:
            # at() re-validates the resolved config; prefix errors with the point
            try:
                cfg.at(point)
            except ConfigError as exc:
                _fail(f"sweep point {point}: {exc}")


# ---------------------------------------------------------------------------
# dict <-> dataclass conversion


def _coerce(value, hint, path):
    origin = typing.get_origin(hint)
    if origin is Union:
        options = typing.get_args(hint)
        if value is None and type(None) in options:
            return None
        errors = []
        for opt in options:
            if opt is type(None):
                continue
            try:
                return _coerce(value, opt, path)
            except ConfigError as exc:
                errors.append(str(exc))
        _fail(errors[0] if errors else f"{path}: invalid value {value!r}")
    if dataclasses.is_dataclass(hint):
        if not isinstance(value, dict):
            _fail(f"{path}: expected a table, got {type(value).__name__}")
        return _from_dict(hint, value, path)
    if hint is bool:
        if not isinstance(value, bool):
            _fail(f"{path}: expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            _fail(f"{path}: expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            _fail(f"{path}: expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            _fail(f"{path}: expected a string, got {value!r}")
        return value
    if hint is tuple:
        if not isinstance(value, (list, tuple)):
            _fail(f"{path}: expected an array, got {value!r}")
        return tuple(float(v) if isinstance(v, int) and not isinstance(v, bool) else v for v in value)
    raise TypeError(f"unsupported config type {hint!r}")


def _from_dict(cls, data: dict, prefix=""):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        paths = ", ".join(f"{prefix}.{k}" if prefix else k for k in unknown)
        _fail(f"unknown config key(s): {paths}")
    kwargs = {}
    for key, value in data.items():
        path = f"{prefix}.{key}" if prefix else key
        kwargs[key] = _coerce(value, hints[key], path)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        _fail(f"{prefix}: {exc}")


def _typed_sweep(data: dict) -> dict:
    # Axis values keep their natural type: strings for categorical axes, floats otherwise.
    sweep = data.get("sweep")
    if isinstance(sweep, dict):
        for axis in ("b_ratio", "alpha", "sigma_q2"):
            for v in sweep.get(axis, ()):
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    _fail(f"sweep.{axis}: expected numbers, got {v!r}")
        for axis in ("algorithm", "regime"):
            for v in sweep.get(axis, ()):
                if not isinstance(v, str):
                    _fail(f"sweep.{axis}: expected strings, got {v!r}")
    return data


def _unknown_keys(cls, data: dict, prefix=""):
    hints = typing.get_type_hints(cls)
    found = []
    for key, value in data.items():
        path = f"{prefix}.{key}" if prefix else key
        if key not in hints:
            found.append(path)
        elif dataclasses.is_dataclass(hints[key]) and isinstance(value, dict):
            found.extend(_unknown_keys(hints[key], value, path))
    return found


def config_from_dict(data: dict) -> ExperimentConfig:
    """Build a validated config from nested plain data (strict about keys)."""
    unknown = _unknown_keys(ExperimentConfig, data)
    if unknown:
        _fail(f"unknown config key(s): {', '.join(unknown)}")
    return _from_dict(ExperimentConfig, _typed_sweep(dict(data)))


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Plain, JSON-serializable form that :func:`config_from_dict` round-trips."""
    return json.loads(json.dumps(dataclasses.asdict(cfg)))


def parse_config(path=None, **overrides) -> ExperimentConfig:
    """Load a TOML config (or defaults when ``path`` is None) and apply overrides."""
    data = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(data).with_overrides(**overrides)

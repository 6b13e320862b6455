"""Experiment configuration: JSON file plus command-line overrides."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .optimizers import ALGORITHMS, OptimizerConfig

DEFAULT_P_GRID = (0.8, 0.85, 0.9, 0.95, 0.99)
OBJECTIVES = ("erm", "superquantile", "smoothed_superquantile")
CV_METRICS = ("accuracy", "val_loss_p90")


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 2)."""


@dataclass
class DataConfig:
    source: str = "synthetic"
    generator: str = "regression"
    n: int = 1000
    d: int = 10
    class_sep: float = 2.0
    positive_fraction: float = 0.5
    rank: int | None = None
    # None: the dataset is regenerated per run seed
    seed: int | None = None
    path: str | None = None
    schema: dict | str | None = None


@dataclass
class ObjectiveConfig:
    kind: str = "smoothed_superquantile"
    p: float = 0.9
    mu: float = 0.1

    @property
    def mode(self) -> str:
        return {"erm": "erm", "superquantile": "superquantile",
                "smoothed_superquantile": "smoothed"}[self.kind]


@dataclass
class ShiftConfig:
    kind: str = "downsample_majority"
    ratio: float = 0.10
    alpha: float = 0.5


@dataclass
class CVConfig:
    p_grid: list = field(default_factory=lambda: list(DEFAULT_P_GRID))
    folds: int = 5
    # None: accuracy for classification, val_loss_p90 for regression
    metric: str | None = None
    stratified: bool = False


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    loss: str | None = None
    bias: bool = False
    standardize: bool = True
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    # None: 1 / n_train
    lam: float | None = None
    train_fraction: float = 0.8
    shift: ShiftConfig | None = None
    cv: CVConfig = field(default_factory=CVConfig)
    seeds: list = field(default_factory=lambda: [0])
    histogram_bins: int = 30
    alphas: list | None = None
    mus: list | None = None
    save_traces: bool = False
    output: str | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {
    "data": DataConfig,
    "objective": ObjectiveConfig,
    "shift": ShiftConfig,
    "cv": CVConfig,
}


def _build(cls, obj, where: str):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(obj) - names
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {sorted(unknown)}")
    try:
        return cls(**obj)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def from_dict(obj: dict) -> ExperimentConfig:
    if not isinstance(obj, dict):
        raise ConfigError("configuration must be a JSON object")
    obj = dict(obj)
    if "lambda" in obj:
        obj["lam"] = obj.pop("lambda")
    kwargs = {}
    for key, value in obj.items():
        if key in _SECTIONS:
            kwargs[key] = None if value is None else _build(_SECTIONS[key], value, key)
        elif key == "optimizer":
            kwargs[key] = _build(OptimizerConfig, value, "optimizer")
        else:
            kwargs[key] = value
    cfg = _build(ExperimentConfig, {}, "config")
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(kwargs) - names
    if unknown:
        raise ConfigError(f"unknown top-level field(s) {sorted(unknown)}")
    for k, v in kwargs.items():
        setattr(cfg, k, v)
    validate(cfg)
    return cfg


def load(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    cfg = from_dict(obj)
    # relative data paths are resolved against the config file
    base = Path(path).resolve().parent
    if cfg.data.path is not None and not Path(cfg.data.path).is_absolute():
        cfg.data.path = str(base / cfg.data.path)
    if isinstance(cfg.data.schema, str) and not Path(cfg.data.schema).is_absolute():
        cfg.data.schema = str(base / cfg.data.schema)
    return cfg


def _positive(value, name):
    if not isinstance(value, (int, float)) or isinstance(value, bool) or not value > 0:
        raise ConfigError(f"{name} must be a positive number")


def validate(cfg: ExperimentConfig) -> None:
    d = cfg.data
    if d.source not in ("synthetic", "csv"):
        raise ConfigError("data.source must be 'synthetic' or 'csv'")
    if d.source == "synthetic":
        if d.generator not in ("regression", "classification"):
            raise ConfigError("data.generator must be 'regression' or 'classification'")
        if int(d.n) < 2 or int(d.d) < 1:
            raise ConfigError("data.n must be >= 2 and data.d >= 1")
        if not (0 < d.positive_fraction < 1):
            raise ConfigError("data.positive_fraction must lie in (0, 1)")
    elif d.path is None or d.schema is None:
        raise ConfigError("csv data needs both data.path and data.schema")
    if cfg.loss is not None and cfg.loss not in ("squared", "logistic"):
        raise ConfigError("loss must be 'squared' or 'logistic'")
    o = cfg.objective
    if o.kind not in OBJECTIVES:
        raise ConfigError(f"objective.kind must be one of {OBJECTIVES}")
    if o.kind != "erm" and not (0 <= o.p < 1):
        raise ConfigError("objective.p must lie in [0, 1)")
    if o.kind == "smoothed_superquantile":
        _positive(o.mu, "objective.mu")
    if not isinstance(cfg.optimizer, OptimizerConfig):
        raise ConfigError("optimizer section is malformed")
    if cfg.optimizer.algorithm not in ALGORITHMS:
        raise ConfigError(f"optimizer.algorithm must be one of {ALGORITHMS}")
    if cfg.lam is not None and not (isinstance(cfg.lam, (int, float)) and cfg.lam >= 0):
        raise ConfigError("lambda must be a non-negative number")
    if not (0 < cfg.train_fraction < 1):
        raise ConfigError("train_fraction must lie in (0, 1)")
    if cfg.shift is not None:
        s = cfg.shift
        if s.kind == "downsample_majority":
            _positive(s.ratio, "shift.ratio")
        elif s.kind == "rebalance":
            if not (0 < s.alpha < 1):
                raise ConfigError("shift.alpha must lie in (0, 1)")
        else:
            raise ConfigError("shift.kind must be 'downsample_majority' or 'rebalance'")
    c = cfg.cv
    if not c.p_grid or not all(isinstance(p, (int, float)) and 0 <= p < 1 for p in c.p_grid):
        raise ConfigError("cv.p_grid must be a non-empty list of levels in [0, 1)")
    if int(c.folds) < 2:
        raise ConfigError("cv.folds must be >= 2")
    if c.metric is not None and c.metric not in CV_METRICS:
        raise ConfigError(f"cv.metric must be one of {CV_METRICS}")
    if not cfg.seeds or not all(isinstance(s, int) and not isinstance(s, bool) for s in cfg.seeds):
        raise ConfigError("seeds must be a non-empty list of integers")
    if int(cfg.histogram_bins) < 1:
        raise ConfigError("histogram_bins must be >= 1")
    if cfg.alphas is not None and not all(0 < a < 1 for a in cfg.alphas):
        raise ConfigError("alphas must lie in (0, 1)")
    if cfg.mus is not None and not all(isinstance(m, (int, float)) and m > 0 for m in cfg.mus):
        raise ConfigError("mus must be positive")


def apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    """Overlay command-line flags (attributes left as None are ignored)."""
    opt = {}
    mapping = {
        "algorithm": "algorithm", "max_iter": "max_iter", "batch_size": "batch_size",
        "lr": "step_size", "momentum": "momentum", "decay": "decay_factor",
        "decay_period": "decay_period", "tolerance": "tolerance",
    }
    for flag, fld in mapping.items():
        v = getattr(args, flag, None)
        if v is not None:
            opt[fld] = v
    if opt:
        try:
            cfg.optimizer = dataclasses.replace(cfg.optimizer, **opt)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    if getattr(args, "p", None) is not None:
        cfg.objective.p = args.p
    if getattr(args, "mu", None) is not None:
        cfg.objective.mu = args.mu
    if getattr(args, "objective", None) is not None:
        cfg.objective.kind = args.objective
    if getattr(args, "loss", None) is not None:
        cfg.loss = args.loss
    if getattr(args, "lam", None) is not None:
        cfg.lam = args.lam
    if getattr(args, "seed", None) is not None:
        cfg.seeds = [args.seed]
    if getattr(args, "output", None) is not None:
        cfg.output = args.output
    validate(cfg)
    return cfg

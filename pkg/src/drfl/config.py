"""YAML run configuration: problem, solver, data pipeline and experiment settings."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from .data import DataError, NoiseSchedule, load_table, scale_features, split_train_test, synthetic_cytology
from .experiments import Grid, add_train_noise, federate
from .model import ClientDataset, ProblemSpec, SolverConfig, SpecError, validate
from .transport import TruthModel, default_truth


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    path: str | None = None
    format: str = "csv"
    label_column: int | str = -1
    header: bool = True
    synthetic_rows: int = 683
    scale: str | None = "box_symmetric"
    train_frac: float = 0.6
    max_train_rows: int | None = None
    clients: int = 3
    imbalance: list | None = None
    train_noise: dict | None = None  # {"client": 1, "mean": ..., "sd": ...}


@dataclass
class RunConfig:
    problem: ProblemSpec
    solver: SolverConfig = SolverConfig()
    data: DataConfig = field(default_factory=DataConfig)
    schedule: NoiseSchedule | None = None
    grid: Grid = Grid()
    folds: int = 5
    volume: dict = field(default_factory=dict)
    seed: int = 0
    base_dir: Path = Path(".")

    @property
    def task(self) -> str:
        return "classification" if self.problem.is_classification else "regression"


def _pick(cls, d: dict, where: str):
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    return cls(**d)


def parse_config(raw: dict, base_dir=".") -> RunConfig:
    if not isinstance(raw, dict) or "problem" not in raw:
        raise ConfigError("config needs a 'problem' section")
    try:
        problem = ProblemSpec.from_dict(raw["problem"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"problem: {exc}") from exc
    seed = int(raw.get("seed", 0))
    solver = dict(raw.get("solver") or {})
    solver.setdefault("seed", seed)
    cfg = RunConfig(
        problem=problem,
        solver=_pick(SolverConfig, solver, "solver"),
        data=_pick(DataConfig, dict(raw.get("data") or {}), "data"),
        folds=int(raw.get("folds", 5)),
        volume=dict(raw.get("volume") or {}),
        seed=seed,
        base_dir=Path(base_dir),
    )
    if raw.get("schedule"):
        cfg.schedule = parse_schedule(raw["schedule"], seed)
    if raw.get("grid"):
        cfg.grid = parse_grid(raw["grid"])
    errs = cfg.solver.errors()
    if errs:
        raise SpecError(errs)
    return cfg


def parse_schedule(d: dict, seed: int = 0) -> NoiseSchedule:
    d = dict(d)
    d.setdefault("seed", seed)
    try:
        return _pick(NoiseSchedule, d, "schedule")
    except TypeError as exc:
        raise ConfigError(f"schedule: {exc}") from exc


def parse_grid(d: dict) -> Grid:
    try:
        return _pick(Grid, {k: tuple(v) for k, v in d.items()}, "grid")
    except TypeError as exc:
        raise ConfigError(f"grid: {exc}") from exc


def load_yaml(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: no such file")
    try:
        with open(path, encoding="utf-8") as fh:
            return yaml.safe_load(fh) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def load_config(path) -> RunConfig:
    return parse_config(load_yaml(path), Path(path).parent)


@dataclass
class Prepared:
    clients: list[ClientDataset]
    X_test: np.ndarray
    y_test: np.ndarray
    inputs_hash_arrays: tuple


def prepare_data(cfg: RunConfig) -> Prepared:
    """Load or synthesize, split, scale (fit on train), partition and add train noise."""
    dc = cfg.data
    if dc.path is not None:
        path = Path(dc.path)
        if not path.is_absolute():
            path = cfg.base_dir / path
        if not path.is_file():
            raise DataError(f"{path}: no such file")
        X, y = load_table(path, dc.format, dc.label_column, cfg.task, dc.header, cfg.problem.n_features)
    else:
        if cfg.task != "classification":
            raise DataError("the synthetic generator only produces classification data; set data.path")
        X, y = synthetic_cytology(dc.synthetic_rows, cfg.seed)
    (X_tr, y_tr), (X_te, y_te) = split_train_test(X, y, dc.train_frac, cfg.seed)
    if dc.max_train_rows is not None:
        X_tr, y_tr = X_tr[: dc.max_train_rows], y_tr[: dc.max_train_rows]
    if dc.scale is not None:
        X_tr, tr = scale_features(X_tr, dc.scale)
        X_te = tr.apply(X_te)
    clients = federate(X_tr, y_tr, dc.clients, cfg.seed, dc.imbalance)
    if dc.train_noise:
        tn = dc.train_noise
        clients = add_train_noise(clients, int(tn.get("client", 1)), float(tn.get("mean", 0.0)), float(tn.get("sd", 0.0)), cfg.seed)
    validate(cfg.problem, clients)
    return Prepared(clients, X_te, y_te, (X, y))


def truth_from(cfg: RunConfig) -> TruthModel:
    t = cfg.volume.get("truth")
    return TruthModel.from_dict(t) if t else default_truth()


def override(cfg: RunConfig, **solver_fields) -> RunConfig:
    """Apply non-None scalar overrides to the solver section."""
    changes = {k: v for k, v in solver_fields.items() if v is not None}
    return replace(cfg, solver=replace(cfg.solver, **changes)) if changes else cfg

"""Dataset ingestion, scaling, splitting, client partitioning and noise."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np

from .model import ClientDataset

log = logging.getLogger(__name__)


class DataError(ValueError):
    pass


# ----- loading ---------------------------------------------------------------


def encode_labels(y, task: str = "classification") -> np.ndarray:
    """Map two-class labels onto {-1, +1} (smaller value -> -1); regression labels pass through."""
    y = np.asarray(y, dtype=float)
    if task == "regression":
        return y
    values = np.unique(y)
    if values.size > 2:
        raise DataError(f"classification labels take {values.size} distinct values, expected 2")
    if values.size == 2 and set(values) != {-1.0, 1.0}:
        return np.where(y == values[1], 1.0, -1.0)
    if values.size == 1 and values[0] not in (-1.0, 1.0):
        return np.where(y > 0, 1.0, -1.0)
    return y.copy()


def _number(cell: str, where: str) -> float:
    try:
        return float(cell)
    except ValueError:
        raise DataError(f"{where}: non-numeric value {cell!r}") from None


def _load_csv(path, label_column, header: bool):
    rows, labels = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        names = None
        if header:
            names = next(reader, None)
            if names is None:
                raise DataError(f"{path}: empty file")
            names = [h.strip() for h in names]
        if isinstance(label_column, str):
            if names is None or label_column not in names:
                raise DataError(f"{path}: no column named {label_column!r}")
            label_idx = names.index(label_column)
        else:
            label_idx = label_column
        width = None
        for lineno, row in enumerate(reader, start=2 if header else 1):
            if not row or all(not c.strip() for c in row):
                continue
            where = f"{path}, line {lineno}"
            if width is None:
                width = len(row)
            if len(row) != width:
                raise DataError(f"{where}: expected {width} fields, found {len(row)}")
            li = label_idx % width
            cell = row[li].strip()
            if cell == "":
                raise DataError(f"{where}: missing label")
            labels.append(_number(cell, where))
            rows.append([_number(c.strip(), where) for j, c in enumerate(row) if j != li])
    if not rows:
        raise DataError(f"{path}: no data rows")
    return np.array(rows, dtype=float), np.array(labels)


def _load_libsvm(path, n_features: int | None):
    entries, labels = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            where = f"{path}, line {lineno}"
            parts = line.split()
            labels.append(_number(parts[0], where))
            feats = {}
            for tok in parts[1:]:
                if ":" not in tok:
                    raise DataError(f"{where}: malformed entry {tok!r}")
                k, v = tok.split(":", 1)
                try:
                    idx = int(k)
                except ValueError:
                    raise DataError(f"{where}: bad feature index {k!r}") from None
                if idx < 1:
                    raise DataError(f"{where}: feature indices start at 1")
                feats[idx] = _number(v, where)
            entries.append(feats)
    if not entries:
        raise DataError(f"{path}: no data rows")
    n = n_features or max((max(f) for f in entries if f), default=0)
    X = np.zeros((len(entries), n))
    for i, f in enumerate(entries):
        for k, v in f.items():
            if k > n:
                raise DataError(f"{path}: row {i + 1} has feature {k} beyond n = {n}")
            X[i, k - 1] = v
    return X, np.array(labels)


def load_table(
    path,
    format: str = "csv",
    label_column=-1,
    task: str = "classification",
    header: bool = True,
    n_features: int | None = None,
):
    """Read ``(X, y)`` from CSV (header row, label column by index or name) or libsvm text."""
    if format == "csv":
        X, y = _load_csv(path, label_column, header)
    elif format == "libsvm":
        X, y = _load_libsvm(path, n_features)
    else:
        raise DataError(f"unknown format {format!r}")
    return X, encode_labels(y, task)


# ----- scaling ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ScaleTransform:
    """Per-column min-max map fitted on training data."""

    lo: np.ndarray
    hi: np.ndarray
    target: str = "box_symmetric"

    @property
    def bounds(self) -> tuple[float, float]:
        return (-1.0, 1.0) if self.target == "box_symmetric" else (0.0, 1.0)

    def apply(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        a, b = self.bounds
        span = self.hi - self.lo
        const = span <= 0
        safe = np.where(const, 1.0, span)
        out = a + (b - a) * (X - self.lo) / safe
        out[..., const] = 0.5 * (a + b)
        if np.any(self.outside(out)):
            log.info("scaled data extends outside the support box")
        return out

    def outside(self, X_scaled) -> np.ndarray:
        """Mask of scaled entries that fall outside the target box."""
        a, b = self.bounds
        X_scaled = np.asarray(X_scaled)
        return (X_scaled < a - 1e-12) | (X_scaled > b + 1e-12)


def scale_features(X, target: str = "box_symmetric"):
    """Min-max scale each column into the support box; returns ``(X_scaled, transform)``."""
    if target not in ("box_symmetric", "box_unit"):
        raise DataError(f"unknown scaling target {target!r}")
    X = np.asarray(X, dtype=float)
    tr = ScaleTransform(X.min(axis=0), X.max(axis=0), target)
    return tr.apply(X), tr


# ----- splitting and partitioning --------------------------------------------


def split_train_test(X, y, train_frac: float = 0.6, seed: int = 0):
    """Random split with ``floor(train_frac * N)`` training rows (at least one row on each side)."""
    if not 0 < train_frac < 1:
        raise DataError("train_frac must lie strictly between 0 and 1")
    X, y = np.asarray(X, dtype=float), np.asarray(y, dtype=float)
    N = y.shape[0]
    if N < 2:
        raise DataError("need at least two rows to split")
    n_train = min(max(int(math.floor(train_frac * N)), 1), N - 1)
    perm = np.random.default_rng(seed).permutation(N)
    tr, te = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    return (X[tr], y[tr]), (X[te], y[te])


def partition_clients(X, y, S: int = 3, seed: int = 0) -> list[ClientDataset]:
    """Random near-equal partition; the first ``N mod S`` clients get one extra row."""
    X, y = np.asarray(X, dtype=float), np.asarray(y, dtype=float)
    N = y.shape[0]
    if S < 1 or S > N:
        raise DataError(f"cannot split {N} rows across {S} clients")
    perm = np.random.default_rng(seed).permutation(N)
    return [ClientDataset(s + 1, X[np.sort(idx)], y[np.sort(idx)]) for s, idx in enumerate(np.array_split(perm, S))]


def partition_imbalanced(clients: list[ClientDataset], minority_ratios, seed: int = 0) -> list[ClientDataset]:
    """Keep ``floor(ratio * m)`` of each client's ``m`` minority-class rows (ratio 1 keeps all)."""
    if len(minority_ratios) != len(clients):
        raise DataError("one minority ratio per client is required")
    out = []
    for cl, ratio in zip(clients, minority_ratios):
        if not 0 < ratio <= 1:
            raise DataError(f"client {cl.client_id}: minority ratio must lie in (0, 1]")
        classes, counts = np.unique(cl.y, return_counts=True)
        if classes.size < 2:
            raise DataError(f"client {cl.client_id} holds a single class")
        minority = classes[np.argmin(counts)] if counts[0] != counts[1] else classes[0]
        idx_min = np.nonzero(cl.y == minority)[0]
        keep = int(math.floor(ratio * idx_min.size + 1e-9))
        if keep < 1:
            raise DataError(f"client {cl.client_id}: ratio {ratio} leaves no minority rows")
        rng = np.random.default_rng([seed, cl.client_id])
        kept = rng.choice(idx_min, size=keep, replace=False)
        idx = np.sort(np.concatenate([np.nonzero(cl.y != minority)[0], kept]))
        out.append(cl.subset(idx))
    return out


# ----- noise -----------------------------------------------------------------


def add_noise(X, mean: float, sd: float, rng) -> np.ndarray:
    if sd < 0:
        raise DataError("noise SD must be >= 0")
    X = np.asarray(X, dtype=float)
    return X + (mean + sd * rng.standard_normal(X.shape) if sd > 0 else mean)


def inject_noise(dataset: ClientDataset, mean: float, sd: float, seed: int = 0) -> ClientDataset:
    """Add i.i.d. Gaussian(mean, sd^2) to every feature entry; labels are untouched."""
    rng = np.random.default_rng([seed, dataset.client_id])
    return ClientDataset(dataset.client_id, add_noise(dataset.X, mean, sd, rng), dataset.y)


NOISE_MODES = ("fixed_sd_vary_mean", "fixed_mean_vary_sd", "ratio")


@dataclass(frozen=True)
class NoiseSchedule:
    """Test-noise sweep: which of (mean, SD) is held fixed and which one varies."""

    mode: str
    grid: tuple
    fixed: float = 0.0
    ratio: float = 1.0
    target: str = "test"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(float(g) for g in self.grid))
        errs = []
        if self.mode not in NOISE_MODES:
            errs.append(f"unknown noise mode {self.mode!r}")
        if not self.grid:
            errs.append("noise grid is empty")
        if self.mode == "fixed_sd_vary_mean" and self.fixed < 0:
            errs.append("fixed SD must be >= 0")
        if self.mode != "fixed_sd_vary_mean" and any(g < 0 for g in self.grid):
            errs.append("SD values must be >= 0")
        if errs:
            raise DataError("; ".join(errs))

    def levels(self) -> list[tuple[float, float]]:
        """``(mean, sd)`` per sweep point."""
        if self.mode == "fixed_sd_vary_mean":
            return [(g, self.fixed) for g in self.grid]
        if self.mode == "fixed_mean_vary_sd":
            return [(self.fixed, g) for g in self.grid]
        return [(self.ratio * g, g) for g in self.grid]


# ----- synthetic data --------------------------------------------------------


def synthetic_cytology(n_rows: int = 683, seed: int = 0, malignant_frac: float = 0.35):
    """Nine integer-valued attributes in 1..10 with two classes, shaped like cell-cytology data.

    Benign rows concentrate on low values and malignant rows on high values,
    with overlapping tails; labels are -1 (benign) and +1 (malignant).
    """
    rng = np.random.default_rng(seed)
    y = np.where(rng.uniform(size=n_rows) < malignant_frac, 1.0, -1.0)
    centre = np.where(y[:, None] > 0, rng.uniform(5.0, 8.0, (n_rows, 1)), rng.uniform(1.0, 3.0, (n_rows, 1)))
    loadings = rng.uniform(0.6, 1.4, size=9)
    X = centre * loadings + rng.normal(0.0, 1.6, size=(n_rows, 9))
    return np.clip(np.rint(X), 1, 10), y

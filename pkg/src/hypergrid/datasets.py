"""Dataset container, the simulated benchmark generator and the Bike Share loader."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DomainError

BLOCK_SIZES = (2, 3, 2, 3, 2, 3)
SIM_COLUMNS = tuple(f"x{i}" for i in range(15))

BIKESHARE_FEATURES = (
    "season", "yr", "mnth", "hr", "holiday", "weekday",
    "workingday", "weathersit", "temp", "hum", "windspeed",
)
# default train:valid sizes; any remaining records are not used
BIKESHARE_SIZES = (9_384, 3_997)


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    target: np.ndarray
    task: str
    column_names: Optional[tuple] = None

    def __post_init__(self):
        X = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.ascontiguousarray(self.target, dtype=np.float64).ravel()
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise DomainError(f"features {X.shape} and target {y.shape} disagree")
        if self.task not in ("binary", "continuous"):
            raise DomainError(f"task must be binary or continuous, got {self.task!r}")
        if not (np.isfinite(X).all() and np.isfinite(y).all()):
            raise DomainError("dataset contains missing or non-finite values")
        if self.task == "binary" and not np.isin(y, (0.0, 1.0)).all():
            raise DomainError("binary targets must be 0/1")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "target", y)
        if self.column_names is not None:
            object.__setattr__(self, "column_names", tuple(self.column_names))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.features[rows], self.target[rows], self.task, self.column_names)

    def with_features(self, features) -> "Dataset":
        return Dataset(features, self.target, self.task, self.column_names)


def _g(a, b, c, d, e):
    return (
        np.abs(a)
        + 0.5 * b
        - 2.0 * np.log(np.abs(c) + 1.0)
        + np.exp(0.5 * d)
        + 1.0 / (0.5 * np.abs(e) + 1.0)
        + 1.5 * a * b
        + np.abs(a * b * c)
        + 1.5 * np.log(np.abs(c + d + e) + 1.0)
        + 0.75 * np.maximum(d, e)
        + np.exp(0.35 * (e - c))
    )


def sim_f(x) -> np.ndarray | float:
    """Noise-free simulated response for one 15-vector or an (n, 15) matrix."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 15:
        raise DomainError(f"sim_f expects 15 predictors, got {x.shape[-1]}")
    if not np.isfinite(x).all():
        raise DomainError("sim_f needs finite inputs")
    cols = np.moveaxis(x, -1, 0)
    value = _g(*cols[0:5]) + 0.7 * _g(*cols[5:10]) + 0.4 * _g(*cols[10:15])
    return float(value) if np.ndim(value) == 0 else value


@dataclass(frozen=True)
class SimSpec:
    n: int
    rho: float = 0.5
    noise_sd: float = 1.0
    seed: int = 0
    train_ratio: float = 0.75

    def __post_init__(self):
        if not 0.0 <= self.rho < 1.0:
            raise DomainError(f"block correlation must lie in [0, 1), got {self.rho}")
        if self.noise_sd < 0:
            raise DomainError("noise_sd must be nonnegative")
        if self.n < 2:
            raise DomainError("need at least 2 samples")


def block_correlated_normal(n: int, rho: float, rng: np.random.Generator,
                            blocks: Sequence[int] = BLOCK_SIZES) -> np.ndarray:
    """Standard normals, equicorrelated ``rho`` within each block, independent across."""
    parts = []
    for size in blocks:
        cov = np.full((size, size), rho) + (1.0 - rho) * np.eye(size)
        chol = np.linalg.cholesky(cov)
        parts.append(rng.standard_normal((n, size)) @ chol.T)
    return np.hstack(parts)


def gen_sim(spec: SimSpec) -> tuple[Dataset, Dataset]:
    rng = np.random.default_rng(spec.seed)
    X = block_correlated_normal(spec.n, spec.rho, rng)
    y = sim_f(X) + spec.noise_sd * rng.standard_normal(spec.n)
    full = Dataset(X, y, "continuous", SIM_COLUMNS)
    return split(full, spec.train_ratio, seed=spec.seed, mode="random")


def split(data: Dataset, ratio: float, seed: int = 0, mode: str = "random") -> tuple[Dataset, Dataset]:
    """Partition into train/valid; the train side gets ``floor(n * ratio)`` rows."""
    if not 0.0 < ratio < 1.0:
        raise DomainError(f"split ratio must lie in (0, 1), got {ratio}")
    n_train = int(math.floor(data.n * ratio + 1e-9))
    if mode == "sequential":
        order = np.arange(data.n)
    elif mode == "random":
        order = np.random.default_rng(seed).permutation(data.n)
    else:
        raise DomainError(f"unknown split mode {mode!r}")
    return data.subset(order[:n_train]), data.subset(order[n_train:])


def minmax_scale(train: Dataset, *others: Dataset) -> tuple[Dataset, ...]:
    """Scale every column to [0, 1] with train-split min/max (constant columns -> 0)."""
    lo = train.features.min(axis=0)
    span = train.features.max(axis=0) - lo
    span = np.where(span > 0, span, 1.0)
    return tuple(d.with_features((d.features - lo) / span) for d in (train, *others))


def load_bikeshare(path, sizes: Sequence[int] = BIKESHARE_SIZES, seed: int = 0,
                   scale: bool = True) -> tuple[Dataset, Dataset]:
    """Load the UCI hourly Bike Share file.

    Target is ``ln(cnt)``. A seeded random subset of ``sum(sizes)`` rows is split
    ``sizes[0]:sizes[1]``; files with fewer rows keep all of them in the
    same proportion.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DomainError(f"{path}: empty file") from None
        missing = [c for c in (*BIKESHARE_FEATURES, "cnt") if c not in header]
        if missing:
            raise ConfigError(f"{path}: missing columns {missing}")
        cols = [header.index(c) for c in BIKESHARE_FEATURES]
        cnt_col = header.index("cnt")
        rows, target, bad = [], [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not f.strip() for f in rec):
                continue
            try:
                values = [float(rec[c]) for c in cols]
                cnt = float(rec[cnt_col])
            except (ValueError, IndexError):
                bad.append(lineno)
                continue
            if cnt <= 0:
                raise DomainError(f"{path}:{lineno}: cnt must be positive, got {cnt}")
            rows.append(values)
            target.append(math.log(cnt))
    if bad:
        shown = ", ".join(map(str, bad[:10]))
        raise DomainError(f"{path}: unparseable rows at line(s) {shown}{' ...' if len(bad) > 10 else ''}")
    if not rows:
        raise DomainError(f"{path}: no data rows")
    full = Dataset(np.array(rows), np.array(target), "continuous", BIKESHARE_FEATURES)
    n_train, n_valid = sizes
    total = n_train + n_valid
    rng = np.random.default_rng(seed)
    order = rng.permutation(full.n)
    if full.n >= total:
        order = order[:total]
    else:
        n_train = int(math.floor(full.n * n_train / total))
    train, valid = full.subset(order[:n_train]), full.subset(order[n_train:])
    if scale:
        train, valid = minmax_scale(train, valid)
    return train, valid


def write_csv(data: Dataset, path) -> None:
    names = data.column_names or tuple(f"x{i}" for i in range(data.p))
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*names, "y"])
        for row, y in zip(data.features, data.target):
            w.writerow([repr(float(v)) for v in row] + [repr(float(y))])


def read_csv(path, task: str, target: str = "y") -> Dataset:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if target not in header:
            raise ConfigError(f"{path}: no target column {target!r}")
        t = header.index(target)
        data = np.array([[float(v) for v in rec] for rec in reader if rec])
    if data.size == 0:
        raise DomainError(f"{path}: no data rows")
    keep = [i for i in range(len(header)) if i != t]
    return Dataset(data[:, keep], data[:, t], task, tuple(header[i] for i in keep))

"""Robustness of fitted models to bounded random perturbations of the inputs.

A perturbation with budget ``b`` moves every numeric cell x_ij by
u_ij * b * range_j with u_ij ~ Uniform(-1, 1), where range_j is the column's
observed range. Binary (0/1) columns are skipped by default, or flipped with
probability b/2 in ``flip`` mode.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .datasets import Dataset
from .errors import DomainError
from .metrics import compute_metric, lower_is_better

BINARY_MODES = ("skip", "flip")


def binary_columns(X: np.ndarray) -> np.ndarray:
    return np.array([np.isin(np.unique(X[:, j]), (0.0, 1.0)).all() and np.unique(X[:, j]).size == 2
                     for j in range(X.shape[1])], dtype=bool)


def perturb_features(X: np.ndarray, budget: float, rng: np.random.Generator, binary_mode: str = "skip",
                     ranges=None, binary=None) -> np.ndarray:
    if budget < 0 or not math.isfinite(budget):
        raise DomainError(f"budget must be a finite nonnegative number, got {budget}")
    if binary_mode not in BINARY_MODES:
        raise DomainError(f"binary_mode must be one of {BINARY_MODES}")
    X = np.asarray(X, dtype=float)
    if ranges is None:
        ranges = X.max(axis=0) - X.min(axis=0) if X.shape[0] else np.zeros(X.shape[1])
    if binary is None:
        binary = binary_columns(X)
    # draw the full noise matrices regardless of budget so paired comparisons
    # and different budgets consume the generator identically
    u = rng.uniform(-1.0, 1.0, size=X.shape)
    flips = rng.random(X.shape)
    scale = np.where(binary, 0.0, budget * ranges)
    out = X + u * scale[None, :]
    if binary_mode == "flip" and binary.any():
        cols = np.flatnonzero(binary)
        hit = flips[:, cols] < 0.5 * budget
        sub = out[:, cols]
        sub[hit] = 1.0 - sub[hit]
        out[:, cols] = sub
    return out


def perturb(data: Dataset, budget: float, seed: int, binary_mode: str = "skip") -> Dataset:
    """Perturbed copy of ``data``; targets untouched, budget 0 returns equal data."""
    X = perturb_features(data.features, budget, np.random.default_rng(seed), binary_mode)
    if budget == 0:
        X = np.array(data.features, copy=True)
    return data.with_features(X)


@dataclass(frozen=True)
class RobustnessCurve:
    budgets: tuple
    metric_mean: tuple
    metric_sd: tuple  # NaN when reps == 1
    reps: int
    seed: int
    metric: str

    @property
    def baseline(self) -> float:
        return self.metric_mean[0]

    def degradation(self) -> np.ndarray:
        """Relative change against budget 0, signed so that positive means worse."""
        mean = np.asarray(self.metric_mean)
        base = mean[0]
        if base == 0:
            return np.where(mean == base, 0.0, np.inf)
        change = (mean - base) / abs(base)
        return change if lower_is_better(self.metric) else -change


def _check_budgets(budgets: Sequence[float]) -> list:
    budgets = [float(b) for b in budgets]
    if not budgets:
        raise DomainError("need at least one budget")
    if budgets[0] != 0.0:
        raise DomainError("budgets must start at 0")
    if any(b2 <= b1 for b1, b2 in zip(budgets, budgets[1:])):
        raise DomainError("budgets must be strictly ascending")
    return budgets


def _draw_seed(seed: int, b_index: int, rep: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, b_index, rep]))


def _scores(models, valid: Dataset, metric: str, budgets, reps, seed, binary_mode):
    ranges = valid.features.max(axis=0) - valid.features.min(axis=0)
    binary = binary_columns(valid.features)
    out = np.zeros((len(models), len(budgets), reps))
    clean = [compute_metric(metric, valid.target, m.predict(valid.features)) for m in models]
    for bi, b in enumerate(budgets):
        for r in range(reps):
            if b == 0.0:
                for mi in range(len(models)):
                    out[mi, bi, r] = clean[mi]
                continue
            X = perturb_features(valid.features, b, _draw_seed(seed, bi, r), binary_mode, ranges, binary)
            for mi, m in enumerate(models):
                out[mi, bi, r] = compute_metric(metric, valid.target, m.predict(X))
    return out


def _curve(scores: np.ndarray, budgets, reps, seed, metric) -> RobustnessCurve:
    mean = tuple(float(v) for v in scores.mean(axis=1))
    if reps > 1:
        sd = tuple(float(v) for v in scores.std(axis=1, ddof=1))
    else:
        sd = tuple(math.nan for _ in budgets)
    sd = (0.0,) + sd[1:]
    return RobustnessCurve(tuple(budgets), mean, sd, reps, seed, metric)


def robustness_curve(model, valid: Dataset, metric: str, budgets: Sequence[float], reps: int = 10,
                     seed: int = 0, binary_mode: str = "skip") -> RobustnessCurve:
    budgets = _check_budgets(budgets)
    if reps < 1:
        raise DomainError("reps must be at least 1")
    scores = _scores([model], valid, metric, budgets, reps, seed, binary_mode)[0]
    return _curve(scores, budgets, reps, seed, metric)


@dataclass(frozen=True)
class Comparison:
    curve_a: RobustnessCurve
    curve_b: RobustnessCurve
    deltas: tuple  # per budget: mean over reps of metric(a) - metric(b) on the same draws
    verdict: str  # "a less robust", "b less robust" or "tie"


def compare_models(model_a, model_b, valid: Dataset, metric: str, budgets: Sequence[float], reps: int = 10,
                   seed: int = 0, binary_mode: str = "skip") -> Comparison:
    """Paired robustness comparison: both models see the same perturbed inputs.

    The less robust model is the one whose relative degradation is larger at
    the majority of positive budgets.
    """
    budgets = _check_budgets(budgets)
    if reps < 1:
        raise DomainError("reps must be at least 1")
    if model_a.n_features != model_b.n_features or model_a.n_features != valid.p:
        raise DomainError(f"feature counts differ: {model_a.n_features}, {model_b.n_features}, data {valid.p}")
    scores = _scores([model_a, model_b], valid, metric, budgets, reps, seed, binary_mode)
    ca = _curve(scores[0], budgets, reps, seed, metric)
    cb = _curve(scores[1], budgets, reps, seed, metric)
    deltas = tuple(float(v) for v in (scores[0] - scores[1]).mean(axis=1))
    da, db = ca.degradation(), cb.degradation()
    a_worse = sum(1 for i in range(1, len(budgets)) if da[i] > db[i])
    b_worse = sum(1 for i in range(1, len(budgets)) if db[i] > da[i])
    positive = len(budgets) - 1
    if a_worse * 2 > positive:
        verdict = "a less robust"
    elif b_worse * 2 > positive:
        verdict = "b less robust"
    else:
        verdict = "tie"
    return Comparison(ca, cb, deltas, verdict)


def write_curve_csv(curve: RobustnessCurve, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["budget", "mean", "sd", "reps"])
        for b, m, s in zip(curve.budgets, curve.metric_mean, curve.metric_sd):
            w.writerow([repr(b), repr(m), "" if math.isnan(s) else repr(s), curve.reps])

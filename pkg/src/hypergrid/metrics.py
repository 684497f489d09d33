"""Evaluation metrics and the gap / relative-decrease statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.stats import rankdata

from .errors import DomainError, UndefinedMetricError

METRICS = ("mse", "r2", "logloss", "auc")
LOWER_IS_BETTER = {"mse": True, "logloss": True, "r2": False, "auc": False}
TASK_METRICS = {"binary": ("auc", "logloss"), "continuous": ("mse", "r2")}
LOGLOSS_EPS = 1e-15


def check_kind(kind: str) -> str:
    if kind not in LOWER_IS_BETTER:
        raise DomainError(f"unknown metric {kind!r}; expected one of {METRICS}")
    return kind


def lower_is_better(kind: str) -> bool:
    return LOWER_IS_BETTER[check_kind(kind)]


def is_better(a: float, b: float, kind: str) -> bool:
    """True when ``a`` is strictly better than ``b`` under ``kind``."""
    return a < b if lower_is_better(kind) else a > b


def sort_key(kind: str):
    """Key turning a metric value into an ascending 'badness' score."""
    sign = 1.0 if lower_is_better(kind) else -1.0
    return lambda value: sign * value


def _pair(y_true, y_pred):
    y = np.asarray(y_true, dtype=float).ravel()
    p = np.asarray(y_pred, dtype=float).ravel()
    if y.shape != p.shape:
        raise DomainError(f"length mismatch: {y.size} targets vs {p.size} predictions")
    if y.size == 0:
        raise DomainError("metrics need at least one observation")
    return y, p


def mse(y_true, y_pred) -> float:
    y, p = _pair(y_true, y_pred)
    return float(np.mean((y - p) ** 2))


def r2(y_true, y_pred) -> float:
    y, p = _pair(y_true, y_pred)
    sst = float(np.sum((y - y.mean()) ** 2))
    if sst == 0.0:
        raise UndefinedMetricError("r2 undefined: target has zero total sum of squares")
    return 1.0 - float(np.sum((y - p) ** 2)) / sst


def logloss(y_true, y_pred, eps: float = LOGLOSS_EPS) -> float:
    y, p = _pair(y_true, y_pred)
    p = np.clip(p, eps, 1.0 - eps)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log1p(-p))))


def auc(y_true, y_pred) -> float:
    """Mann-Whitney AUC with half credit for tied scores."""
    y, p = _pair(y_true, y_pred)
    pos = y == 1
    n1 = int(pos.sum())
    n0 = y.size - n1
    if n1 == 0 or n0 == 0:
        raise UndefinedMetricError("auc undefined: only one class present")
    ranks = rankdata(p)
    u = ranks[pos].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


_FUNCS = {"mse": mse, "r2": r2, "logloss": logloss, "auc": auc}


def compute_metric(kind: str, y_true, y_pred) -> float:
    return _FUNCS[check_kind(kind)](y_true, y_pred)


@dataclass(frozen=True)
class GapReportRow:
    metric_train: float
    metric_valid: float
    gap: float
    relative_gap_pct: Optional[float]  # None when metric_valid == 0

    @property
    def relative_defined(self) -> bool:
        return self.relative_gap_pct is not None


def gap_stats(metric_train: float, metric_valid: float) -> GapReportRow:
    gap = abs(metric_train - metric_valid)
    rel = 100.0 * gap / abs(metric_valid) if metric_valid != 0 else None
    return GapReportRow(float(metric_train), float(metric_valid), float(gap), rel)


def relative_decrease(metric_gopt: float, metric_ropt: float) -> float:
    """Percentage loss of the reduced-search optimum against the grid optimum."""
    if metric_gopt == 0 or not math.isfinite(metric_gopt):
        raise UndefinedMetricError("relative decrease undefined for a zero reference metric")
    return 100.0 * abs(metric_gopt - metric_ropt) / abs(metric_gopt)

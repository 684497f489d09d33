"""Post-hoc analyses over a completed study.

Every analysis skips failed records (and records lacking the requested
metric) and reports how many it skipped.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np
from scipy.stats import rankdata

from .errors import DegenerateDesignError, DesignError, DomainError
from .expr import compile_filter
from .metrics import GapReportRow, gap_stats, lower_is_better
from .study import StudyResult, ranked

Filter = Union[None, str, Callable]

DEGENERATE_RTOL = 1e-12


def _resolve_filter(result: StudyResult, filt: Filter):
    if filt is None:
        return None
    if isinstance(filt, str):
        return compile_filter(filt, known=set(result.space.names))
    return filt


def apply_filter(result: StudyResult, filt: Filter) -> StudyResult:
    pred = _resolve_filter(result, filt)
    return result if pred is None else result.filter(pred)


# ANOVA -----------------------------------------------------------------------

@dataclass(frozen=True)
class EffectRow:
    effect: str
    factors: tuple
    ss: float
    df: int
    f_stat: float
    f_share_pct: float
    cum_f_share_pct: float

    @property
    def is_interaction(self) -> bool:
        return len(self.factors) == 2


@dataclass
class AnovaTable:
    rows: list
    ss_total: float
    ss_residual: float
    df_residual: int
    n_records: int
    skipped: int = 0

    def __iter__(self):
        return iter(self.rows)

    def __len__(self):
        return len(self.rows)

    def __getitem__(self, i):
        return self.rows[i]

    def row(self, effect: str) -> EffectRow:
        for r in self.rows:
            if r.effect == effect:
                return r
        raise KeyError(effect)


def _effect_name(factors: Sequence[str]) -> str:
    return ":".join(factors)


def _with_shares(raw: list, key: str) -> list[EffectRow]:
    """Sort (effect, factors, ss, df, f) tuples by ``key`` descending and attach shares."""
    idx = 4 if key == "f" else 2
    raw = sorted(raw, key=lambda t: (-t[idx], t[0]))
    total = sum(t[idx] for t in raw)
    rows, cum = [], 0.0
    for name, factors, ss, df, f in raw:
        share = 100.0 * (f if key == "f" else ss) / total if total > 0 else 0.0
        cum += share
        rows.append(EffectRow(name, factors, ss, df, f, share, cum))
    return rows


def factorial_array(result: StudyResult, metric: str, split: str = "valid"):
    """Arrange ok records into a dense array indexed by factor levels.

    Factors are the space's parameters that take at least two values among the
    records; levels are the values present, in grid order. Returns
    (factor names, level lists, array).
    """
    records = result.ok_records(metric, split)
    if not records:
        raise DesignError(f"no ok records carry {split} metric {metric!r}")
    factors, levels = [], []
    for p in result.space.params:
        present = {p.level(r.config[p.name]) for r in records}
        if len(present) >= 2:
            factors.append(p.name)
            levels.append([p.grid[i] for i in sorted(present)])
    shape = tuple(len(lv) for lv in levels)
    cells = np.full(shape, np.nan)
    counts = np.zeros(shape, dtype=int)
    lookup = []
    for name, lv in zip(factors, levels):
        param = result.space[name]
        pos = {param.level(v): j for j, v in enumerate(lv)}
        lookup.append((param, pos))
    for r in records:
        key = tuple(pos[param.level(r.config[param.name])] for param, pos in lookup)
        counts[key] += 1
        cells[key] = getattr(r, split)[metric]
    return factors, levels, cells, counts


def balanced_anova(result: StudyResult, metric: str, filter: Filter = None, split: str = "valid") -> AnovaTable:
    """Main effects plus all pairwise interactions, residual pooling the rest.

    F-share of an effect is its F statistic as a percentage of the sum of all
    effects' F statistics. Rows are sorted by F descending, ties by name.
    """
    sub = apply_filter(result, filter)
    skipped = sub.skipped(metric)
    factors, levels, Y, counts = factorial_array(sub, metric, split)
    k = len(factors)
    if k < 3:
        raise DesignError(f"balanced ANOVA needs at least 3 varying hyperparameters, found {k}: {factors}")
    if (counts != 1).any():
        bad = np.argwhere(counts != 1)
        described = []
        for cell in bad[:5]:
            desc = ", ".join(f"{f}={levels[i][j]!r}" for i, (f, j) in enumerate(zip(factors, cell)))
            described.append(f"({desc}) has {counts[tuple(cell)]} records")
        more = f" and {len(bad) - 5} more" if len(bad) > 5 else ""
        raise DesignError("design is not a complete single-replicate factorial: "
                          + "; ".join(described) + more)

    N = Y.size
    grand = Y.mean()
    ss_total = float(((Y - grand) ** 2).sum())
    axes = range(k)
    mains = {}
    raw = []
    for i in axes:
        others = tuple(a for a in axes if a != i)
        m = Y.mean(axis=others)
        mains[i] = m
        ss = float((N / Y.shape[i]) * ((m - grand) ** 2).sum())
        raw.append([factors[i], (factors[i],), ss, Y.shape[i] - 1])
    for i, j in itertools.combinations(axes, 2):
        others = tuple(a for a in axes if a not in (i, j))
        mij = Y.mean(axis=others) if others else Y
        inter = mij - mains[i][:, None] - mains[j][None, :] + grand
        ss = float((N / (Y.shape[i] * Y.shape[j])) * (inter ** 2).sum())
        raw.append([_effect_name((factors[i], factors[j])), (factors[i], factors[j]), ss,
                    (Y.shape[i] - 1) * (Y.shape[j] - 1)])
    df_res = (N - 1) - sum(t[3] for t in raw)
    ss_res = max(ss_total - sum(t[2] for t in raw), 0.0)

    if df_res <= 0 or ss_res <= DEGENERATE_RTOL * ss_total or ss_total == 0.0:
        fallback = _with_shares([(n, f, ss, df, math.nan) for n, f, ss, df in raw], key="ss")
        why = "no residual degrees of freedom" if df_res <= 0 else "residual sum of squares vanishes"
        raise DegenerateDesignError(f"F statistics undefined ({why}); rank effects by SS share instead",
                                    fallback=fallback)
    ms_res = ss_res / df_res
    rows = _with_shares([(n, f, ss, df, (ss / df) / ms_res) for n, f, ss, df in raw], key="f")
    return AnovaTable(rows, ss_total, ss_res, df_res, N, skipped)


def top_effects(rows, k: int) -> list[EffectRow]:
    rows = list(rows)
    if k < 1:
        raise DomainError("k must be at least 1")
    if k > len(rows):
        raise DomainError(f"k={k} exceeds the {len(rows)} effects available")
    return rows[:k]


# contour ---------------------------------------------------------------------

@dataclass(frozen=True)
class ContourGrid:
    hp_a: str
    hp_b: str
    values_a: tuple
    values_b: tuple
    cell_means: np.ndarray  # NaN marks an empty cell
    cell_counts: np.ndarray
    metric: str
    skipped: int = 0

    def present(self) -> np.ndarray:
        return self.cell_counts > 0

    def as_r2(self, target_variance: float) -> np.ndarray:
        """Convert an MSE contour to the R-squared scale, 1 - mse/var(y)."""
        if target_variance <= 0:
            raise DomainError("target variance must be positive")
        return 1.0 - self.cell_means / target_variance


def contour(result: StudyResult, hp_a: str, hp_b: str, metric: str, split: str = "valid",
            filter: Filter = None) -> ContourGrid:
    sub = apply_filter(result, filter)
    for name in (hp_a, hp_b):
        if name not in sub.space.names:
            raise DomainError(f"{name!r} is not a hyperparameter of this study")
    pa, pb = sub.space[hp_a], sub.space[hp_b]
    sums = np.zeros((len(pa), len(pb)))
    counts = np.zeros((len(pa), len(pb)), dtype=int)
    for r in sub.ok_records(metric, split):
        i, j = pa.level(r.config[hp_a]), pb.level(r.config[hp_b])
        sums[i, j] += getattr(r, split)[metric]
        counts[i, j] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return ContourGrid(hp_a, hp_b, pa.grid, pb.grid, means, counts, metric, sub.skipped(metric))


# rank correlations -----------------------------------------------------------

def spearman(x, y) -> float:
    """Pearson correlation of average ranks; NaN when either side is constant."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise DomainError(f"spearman needs equal-length vectors, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise DomainError("spearman needs at least 2 observations")
    rx, ry = rankdata(x) - (x.size + 1) / 2.0, rankdata(y) - (y.size + 1) / 2.0
    sx, sy = float(np.dot(rx, rx)), float(np.dot(ry, ry))
    if sx == 0.0 or sy == 0.0:
        return math.nan
    return float(np.clip(np.dot(rx, ry) / math.sqrt(sx * sy), -1.0, 1.0))


@dataclass(frozen=True)
class RankCorrMatrix:
    names: tuple
    k: int
    rho: np.ndarray
    metric: str
    skipped: int = 0

    @property
    def absent(self) -> bool:
        return bool(np.isnan(self.rho).all())

    def get(self, a: str, b: str) -> float:
        return float(self.rho[self.names.index(a), self.names.index(b)])


def top_k(result: StudyResult, metric: str, k: int, split: str = "valid") -> list:
    records = result.ok_records(metric, split)
    if k > len(records):
        raise DomainError(f"k={k} exceeds the {len(records)} ok records")
    return ranked(records, metric, split)[:k]


def top_k_rank_correlations(result: StudyResult, metric: str, k: int = 50, split: str = "valid",
                            filter: Filter = None) -> RankCorrMatrix:
    """Spearman matrix between hyperparameters over the k best records.

    Values enter as grid levels, which preserves their order for numeric
    grids and gives nominal values their declared order.
    """
    sub = apply_filter(result, filter)
    if k < 1:
        raise DomainError("k must be at least 1")
    best_k = top_k(sub, metric, k, split)
    names = tuple(sub.space.names)
    m = len(names)
    rho = np.full((m, m), np.nan)
    if k >= 2:
        levels = np.array([[sub.space[n].level(r.config[n]) for n in names] for r in best_k], dtype=float)
        for i in range(m):
            for j in range(i, m):
                rho[i, j] = rho[j, i] = spearman(levels[:, i], levels[:, j])
    return RankCorrMatrix(names, k, rho, metric, sub.skipped(metric))


# gap report ------------------------------------------------------------------

@dataclass(frozen=True)
class GapEntry:
    index: int
    config: dict
    row: GapReportRow
    overfit: bool
    underfit: bool


@dataclass
class GapReport:
    metric: str
    entries: list
    best: GapEntry
    overfit_threshold: float
    quantile: float
    skipped: int = 0

    @property
    def flagged_overfit(self) -> list:
        return [e for e in self.entries if e.overfit]

    @property
    def flagged_underfit(self) -> list:
        return [e for e in self.entries if e.underfit]


def _decile(n: int) -> int:
    return max(1, math.ceil(0.1 * n))


def gap_report(result: StudyResult, metric: str, quantile: float = 0.9, filter: Filter = None) -> GapReport:
    """Per-record gaps plus the gap of the best record and fit flags.

    Overfit: gap above the ``quantile`` of gaps among the best-decile records.
    Underfit: a worst-decile record whose gap is below the median gap.
    """
    if not 0.0 <= quantile <= 1.0:
        raise DomainError("quantile must lie in [0, 1]")
    sub = apply_filter(result, filter)
    records = [r for r in sub.ok_records(metric, "valid") if metric in r.train]
    if not records:
        raise DomainError(f"no ok records carry {metric!r} on both splits")
    order = ranked(records, metric)
    gaps = {r.index: gap_stats(r.train[metric], r.valid[metric]) for r in records}
    dec = _decile(len(order))
    best_gaps = np.array([gaps[r.index].gap for r in order[:dec]])
    threshold = float(np.quantile(best_gaps, quantile))
    median = float(np.median([g.gap for g in gaps.values()]))
    worst = {r.index for r in order[-dec:]} if len(order) > 1 else set()
    entries = []
    for r in records:
        g = gaps[r.index]
        entries.append(GapEntry(r.index, dict(r.config), g, g.gap > threshold,
                                r.index in worst and g.gap < median))
    by_index = {e.index: e for e in entries}
    skipped = len(sub.records) - len(records)
    return GapReport(metric, entries, by_index[order[0].index], threshold, quantile, skipped)


# concordance -----------------------------------------------------------------

@dataclass
class Concordance:
    pairs: list  # (index, auc, logloss)
    rank_corr: float
    overlap: dict  # requested k -> fraction
    effective_k: dict
    warnings: list = field(default_factory=list)
    skipped: int = 0


def concordance(result: StudyResult, ks: Sequence[int] = (50, 500), split: str = "valid") -> Concordance:
    """Agreement between AUC and logloss rankings of the same records."""
    records = [r for r in result.ok_records() if "auc" in getattr(r, split) and "logloss" in getattr(r, split)]
    if not records:
        raise DomainError("concordance needs records carrying both auc and logloss")
    pairs = [(r.index, getattr(r, split)["auc"], getattr(r, split)["logloss"]) for r in records]
    if len(records) >= 2:
        rho = spearman([p[1] for p in pairs], [-p[2] for p in pairs])
    else:
        rho = math.nan
    by_auc = [r.index for r in ranked(records, "auc", split)]
    by_ll = [r.index for r in ranked(records, "logloss", split)]
    overlap, effective, notes = {}, {}, []
    for k in ks:
        kk = min(int(k), len(records))
        if kk < k:
            msg = f"top-{k} overlap capped at {kk} records"
            warnings.warn(msg, stacklevel=2)
            notes.append(msg)
        effective[k] = kk
        overlap[k] = len(set(by_auc[:kk]) & set(by_ll[:kk])) / kk if kk else math.nan
    return Concordance(pairs, rho, overlap, effective, notes, result.skipped())


# writers ---------------------------------------------------------------------

def _num(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return "" if math.isnan(x) else repr(x)
    return str(x)


def write_effects_csv(rows, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["effect", "ss", "df", "f_stat", "f_share_pct", "cum_f_share_pct"])
        for r in rows:
            w.writerow([r.effect, _num(r.ss), r.df, _num(r.f_stat), _num(r.f_share_pct), _num(r.cum_f_share_pct)])


def write_contour_csv(grid: ContourGrid, path) -> None:
    """Matrix layout: first row holds hp_b values, first column hp_a values."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"{grid.hp_a}\\{grid.hp_b}", *grid.values_b])
        for a, row in zip(grid.values_a, grid.cell_means):
            w.writerow([a, *(_num(float(v)) for v in row)])


def write_corr_csv(matrix: RankCorrMatrix, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["", *matrix.names])
        for name, row in zip(matrix.names, matrix.rho):
            w.writerow([name, *(_num(float(v)) for v in row)])


def write_gap_csv(report: GapReport, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "metric_train", "metric_valid", "gap", "relative_gap_pct", "overfit", "underfit"])
        for e in sorted(report.entries, key=lambda e: e.index):
            w.writerow([e.index, _num(e.row.metric_train), _num(e.row.metric_valid), _num(e.row.gap),
                        _num(e.row.relative_gap_pct), int(e.overfit), int(e.underfit)])


def write_concordance_csv(conc: Concordance, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "auc", "logloss"])
        for idx, a, ll in conc.pairs:
            w.writerow([idx, _num(a), _num(ll)])


def _jsonable(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, (np.floating, np.integer)):
        return _jsonable(value.item())
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def append_summary(path, obj: dict) -> None:
    """Append one JSON object per line (NaN is written as null)."""
    with Path(path).open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":")) + "\n")


def orientation_note(metric: str) -> str:
    return "lower is better" if lower_is_better(metric) else "higher is better"

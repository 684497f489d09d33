"""Two-stage reduced searches for RF, XGB and FFNN, and their evaluation
against a completed full grid."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Union

from .errors import ConfigError, DomainError
from .metrics import is_better, relative_decrease
from .search_space import HyperParam, SearchSpace, geometric_grid
from .study import StudyResult, TrialRecord, best, run_study


class Carry:
    """Marker for a stage-2 value taken from the stage-1 optimum."""

    def __init__(self, name: str, from_rounds: bool = False):
        self.name = name
        self.from_rounds = from_rounds

    def __repr__(self):
        return f"Carry({self.name!r}{', rounds' if self.from_rounds else ''})"


Method = Union[str, tuple]  # "full_grid" or ("random", n, seed)


@dataclass(frozen=True)
class Stage:
    free: Mapping[str, Sequence]
    pinned: Mapping[str, object]
    method: Method = "full_grid"
    early_stopping: Optional[int] = None

    def __post_init__(self):
        both = set(self.free) & set(self.pinned)
        if both:
            raise ConfigError(f"hyperparameters both free and pinned in one stage: {sorted(both)}")
        _check_method(self.method)


@dataclass(frozen=True)
class StagePlan:
    name: str
    stages: tuple
    metric: str

    def __post_init__(self):
        for i, stage in enumerate(self.stages):
            for name, value in stage.pinned.items():
                if isinstance(value, Carry) and i == 0:
                    raise ConfigError(f"stage 1 cannot carry {name} forward")


@dataclass
class StrategyOutcome:
    r_opt: TrialRecord
    stage_results: list
    trials_spent: int
    plan: Optional[StagePlan] = None
    r_opt_stage: int = 0
    rounds_param: Optional[str] = None

    @property
    def r_opt_config(self) -> dict:
        """The optimum's configuration with a realized round count substituted."""
        cfg = dict(self.r_opt.config)
        stage = self.plan.stages[self.r_opt_stage] if self.plan else None
        if (self.rounds_param in cfg and self.r_opt.rounds is not None and stage is not None
                and stage.early_stopping is not None):
            cfg[self.rounds_param] = self.r_opt.rounds
        return cfg


def _check_method(method) -> None:
    if method == "full_grid":
        return
    if isinstance(method, (tuple, list)) and len(method) == 3 and method[0] == "random" and int(method[1]) >= 1:
        return
    raise ConfigError(f"stage method must be 'full_grid' or ('random', n, seed), got {method!r}")


def parse_method(text: str, seed: int = 0) -> Method:
    """``full_grid``, ``random(n)`` or ``random(n, seed)``."""
    text = text.strip()
    if text == "full_grid":
        return "full_grid"
    if text.startswith("random(") and text.endswith(")"):
        parts = [p.strip() for p in text[len("random("):-1].split(",") if p.strip()]
        if 1 <= len(parts) <= 2:
            try:
                return ("random", int(parts[0]), int(parts[1]) if len(parts) == 2 else seed)
            except ValueError:
                pass
    raise ConfigError(f"cannot parse stage method {text!r}")


# domain snapping -------------------------------------------------------------

def _nearest(domain: Sequence, value, inside_toward: Optional[str] = None):
    """Nearest domain value; ties resolved toward ``inside_toward`` ('up'/'down') or down."""
    best_v, best_d = None, math.inf
    for v in domain:
        d = abs(float(v) - float(value))
        if d < best_d - 1e-12 * max(1.0, abs(float(value))):
            best_v, best_d = v, d
        elif abs(d - best_d) <= 1e-12 * max(1.0, abs(float(value))) and inside_toward == "up" and v > best_v:
            best_v = v
    return best_v


def snap_free(values: Sequence, domain: Optional[Sequence]) -> list:
    """Candidates an evaluator with a finite domain can actually answer.

    Keeps the domain values lying between the nearest domain neighbours of
    the plan's smallest and largest candidates (ties resolved inward).
    """
    values = sorted(set(values))
    if domain is None:
        return values
    numeric = sorted(domain)
    lo = _nearest(numeric, values[0], inside_toward="up")
    hi = _nearest(numeric, values[-1], inside_toward="down")
    return [v for v in numeric if lo <= v <= hi]


def snap_pinned(value, domain: Optional[Sequence]):
    if domain is None:
        return value
    return _nearest(sorted(domain), value)


def _kind_of(values: Sequence) -> str:
    if all(isinstance(v, int) and not isinstance(v, bool) for v in values):
        return "integer"
    return "real"


def _stage_space(evaluator, free: Mapping[str, Sequence], pinned: Mapping[str, object]) -> SearchSpace:
    params = []
    for name, values in free.items():
        grid = snap_free(values, evaluator.domain(name))
        params.append(HyperParam(name, _kind_of(grid), tuple(grid)))
    for name, value in pinned.items():
        v = snap_pinned(value, evaluator.domain(name))
        params.append(HyperParam(name, _kind_of([v]), (v,)))
    return SearchSpace(tuple(params))


def _selection(method: Method, size: int):
    if method == "full_grid":
        return "all"
    _, n, s = method
    return {"sample": min(int(n), size), "seed": int(s)}


def run_plan(evaluator, plan: StagePlan, seed: int = 0, parallelism: int = 1,
             rounds_param: Optional[str] = None, order: Optional[Sequence[str]] = None) -> StrategyOutcome:
    """Execute stages in order, resolving Carry markers from the running optimum."""
    stage_results: list[StudyResult] = []
    opt: Optional[TrialRecord] = None
    opt_stage = 0
    for i, stage in enumerate(plan.stages):
        if stage.early_stopping is not None and not evaluator.supports_early_stopping:
            raise ConfigError(f"plan {plan.name} needs early stopping, which {evaluator.kind} lacks")
        pinned = {}
        for name, value in stage.pinned.items():
            if isinstance(value, Carry):
                source = stage_results[-1]
                src = best(source, plan.metric)
                if value.from_rounds:
                    if src.rounds is None:
                        raise DomainError(f"stage {i} carries realized rounds but none were recorded")
                    pinned[name] = int(src.rounds)
                else:
                    pinned[name] = src.config[value.name]
            else:
                pinned[name] = value
        space = _stage_space(evaluator, stage.free, pinned)
        if order is not None:
            ordered = [space[n] for n in order if n in space.names]
            ordered += [p for p in space.params if p.name not in order]
            space = SearchSpace(tuple(ordered))
        result = run_study(space, evaluator, selection=_selection(stage.method, space.size),
                           parallelism=parallelism, seed=seed + i, early_stopping=stage.early_stopping,
                           metadata={"plan": plan.name, "stage": i + 1})
        stage_results.append(result)
        if not result.ok_records(plan.metric):
            raise DomainError(f"stage {i + 1} of {plan.name} produced no successful trials")
        cand = best(result, plan.metric)
        if opt is None or is_better(cand.valid[plan.metric], opt.valid[plan.metric], plan.metric):
            opt, opt_stage = cand, i
    spent = sum(len(r.records) for r in stage_results)
    return StrategyOutcome(opt, stage_results, spent, plan, opt_stage, rounds_param)


# built-in plans ----------------------------------------------------------------

RF_TREES = 300


def rf_plan(n: int, p: int, metric: str, stage1_method: Method = "full_grid", trees: int = RF_TREES) -> StagePlan:
    if p < 1:
        raise DomainError("p must be at least 1")
    if n < 1:
        raise DomainError("n must be at least 1")
    base = max(1, math.floor(math.sqrt(p)))
    max_p = sorted({min(k * base, p) for k in range(1, -(-p // base) + 1)})
    stage1 = Stage(free={"depth": list(range(10, 21)),
                         "msl": geometric_grid(1, math.sqrt(n), 10, integerize=True)},
                   pinned={"max_p": max(1, min(p, round(math.sqrt(p)))), "trees": trees},
                   method=stage1_method)
    stage2 = Stage(free={"max_p": max_p},
                   pinned={"depth": Carry("depth"), "msl": Carry("msl"), "trees": trees})
    return StagePlan("rf2", (stage1, stage2), metric)


def rf_two_stage(evaluator, n: int, p: int, metric: str = "mse", stage1_method: Method = "full_grid",
                 seed: int = 0, trees: int = RF_TREES, parallelism: int = 1) -> StrategyOutcome:
    """Search Depth x MSL with Max_p near sqrt(p), then Max_p at the stage-1 optimum."""
    plan = rf_plan(n, p, metric, stage1_method, trees)
    return run_plan(evaluator, plan, seed, parallelism, order=("depth", "trees", "max_p", "msl"))


XGB_ES_ROUNDS = 20
XGB_MAX_TREES = 500


def xgb_plan(metric: str, stage1_method: Method = "full_grid", lr_points: int = 8, penalty_points: int = 8,
             freeze_rounds: bool = False) -> StagePlan:
    lr = geometric_grid(0.02, 0.1, lr_points)
    penalties = [0.0, *geometric_grid(0.001, 15.0, penalty_points)]
    stage1 = Stage(free={"depth": [3, 4, 5, 6, 7], "lr_rate": lr},
                   pinned={"trees": XGB_MAX_TREES, "l1": 0.0, "l2": 0.1},
                   method=stage1_method, early_stopping=XGB_ES_ROUNDS)
    if freeze_rounds:
        stage2 = Stage(free={"l1": penalties, "l2": penalties},
                       pinned={"depth": Carry("depth"), "lr_rate": Carry("lr_rate"),
                               "trees": Carry("trees", from_rounds=True)})
    else:
        stage2 = Stage(free={"l1": penalties, "l2": penalties},
                       pinned={"depth": Carry("depth"), "lr_rate": Carry("lr_rate"), "trees": XGB_MAX_TREES},
                       early_stopping=XGB_ES_ROUNDS)
    return StagePlan("xgb2", (stage1, stage2), metric)


def xgb_two_stage(evaluator, metric: str = "mse", stage1_method: Method = "full_grid", seed: int = 0,
                  lr_points: int = 8, penalty_points: int = 8, freeze_rounds: bool = False,
                  parallelism: int = 1) -> StrategyOutcome:
    """Depth x Lr_rate with trees by early stopping, then L1 x L2 at that optimum.

    By default stage 2 re-runs early stopping for every penalty pair; with
    ``freeze_rounds`` it reuses the stage-1 realized tree count.
    """
    if not evaluator.supports_early_stopping:
        raise ConfigError(f"xgb2 needs early stopping, which {evaluator.kind} lacks")
    plan = xgb_plan(metric, stage1_method, lr_points, penalty_points, freeze_rounds)
    return run_plan(evaluator, plan, seed, parallelism, rounds_param="trees",
                    order=("lr_rate", "trees", "depth", "l1", "l2"))


FFNN_BATCH_FRACTIONS = (0.05, 0.10, 0.15, 0.20)
FFNN_DEFAULTS = {
    "lr_rate": [0.0005, 0.0007, 0.001, 0.003],
    "layer1": [64, 128, 256, 512],
    "layer2": [0, 16, 32, 64],
    "dropout": [0.0, 0.1, 0.2, 0.3, 0.5],
}
FFNN_L1 = [0.0, 0.0005, 0.001, 0.005]
FFNN_L2 = [0.0, 0.005, 0.01]
FFNN_LR_CAP = 0.01


def ffnn_plan(n: int, metric: str, stage1_method: Method = ("random", 200, 0), grids: Optional[Mapping] = None,
              l1: Sequence = FFNN_L1, l2: Sequence = FFNN_L2) -> StagePlan:
    g = {**FFNN_DEFAULTS, **(grids or {})}
    lr = [v for v in g["lr_rate"] if v < FFNN_LR_CAP]
    if not lr:
        raise ConfigError(f"no learning rate below {FFNN_LR_CAP} in {g['lr_rate']}")
    batch = sorted({max(1, int(round(f * n))) for f in FFNN_BATCH_FRACTIONS})
    stage1 = Stage(free={"lr_rate": lr, "batch_size": batch, "layer1": list(g["layer1"]),
                         "layer2": list(g["layer2"]), "dropout": list(g["dropout"])},
                   pinned={"l1": 0.0, "l2": 0.0}, method=stage1_method)
    stage2 = Stage(free={"l1": list(l1), "l2": list(l2)},
                   pinned={k: Carry(k) for k in ("lr_rate", "batch_size", "layer1", "layer2", "dropout")})
    return StagePlan("ffnn2", (stage1, stage2), metric)


def ffnn_two_stage(evaluator, n: int, metric: str = "mse", stage1_method: Optional[Method] = None, seed: int = 0,
                   grids: Optional[Mapping] = None, parallelism: int = 1) -> StrategyOutcome:
    """Architecture, learning rate, dropout and batch size with no penalties, then L1 x L2."""
    method = stage1_method if stage1_method is not None else ("random", 200, seed)
    plan = ffnn_plan(n, metric, method, grids)
    return run_plan(evaluator, plan, seed, parallelism,
                    order=("lr_rate", "batch_size", "layer1", "layer2", "l1", "l2", "dropout"))


# comparison against the full grid ------------------------------------------------

@dataclass(frozen=True)
class StrategyEvaluation:
    pct_better: float
    rel_decrease: float
    n_better: int
    n_records: int
    metric: str
    gopt_value: float
    ropt_value: float

    @property
    def is_best(self) -> bool:
        return self.n_better == 0

    @property
    def label(self) -> str:
        return "best" if self.is_best else f"{self.pct_better:.2f}%"


def evaluate_strategy(full_grid: StudyResult, outcome: Union[StrategyOutcome, TrialRecord],
                      metric: str) -> StrategyEvaluation:
    """Share of grid records strictly better than r-opt, and r-opt's relative decrease."""
    records = full_grid.ok_records(metric)
    if not records:
        raise DomainError("full grid has no successful records for this metric")
    r_opt = outcome.r_opt if isinstance(outcome, StrategyOutcome) else outcome
    value = r_opt.valid[metric]
    n_better = sum(1 for r in records if is_better(r.valid[metric], value, metric))
    gopt = best(full_grid, metric).valid[metric]
    if value == gopt:
        rel = 0.0
    elif gopt == 0:
        rel = math.nan  # no scale to express the loss against
    else:
        rel = relative_decrease(gopt, value)
    return StrategyEvaluation(100.0 * n_better / len(records), rel,
                              n_better, len(records), metric, gopt, value)


__all__ = [
    "Carry", "Stage", "StagePlan", "StrategyOutcome", "StrategyEvaluation", "parse_method",
    "rf_plan", "xgb_plan", "ffnn_plan", "run_plan", "rf_two_stage", "xgb_two_stage", "ffnn_two_stage",
    "evaluate_strategy", "snap_free", "snap_pinned",
]

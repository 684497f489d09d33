"""Evaluators map one configuration (plus a seed) to train/valid metrics."""

from __future__ import annotations

import json
import math
import subprocess
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

from .datasets import Dataset
from .errors import ConfigError, DomainError, ProtocolError, UndefinedMetricError
from .learners import (ForestParams, GbtParams, MlpParams, TreeParams, fit_forest, fit_gbt,
                       fit_mlp)
from .metrics import TASK_METRICS, compute_metric, is_better
from .search_space import Configuration


@dataclass(frozen=True)
class TrialOutcome:
    train: Mapping[str, float]
    valid: Mapping[str, float]
    rounds: Optional[int] = None


class TrialError(Exception):
    """Evaluation failure carrying a short machine-readable reason."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class Evaluator:
    kind = "base"
    supports_early_stopping = False
    deterministic = True
    accepted: Optional[frozenset] = None  # None accepts any name

    def check_schema(self, names: Sequence[str]) -> None:
        if self.accepted is None:
            return
        unknown = sorted(set(names) - set(self.accepted))
        if unknown:
            raise ConfigError(f"{self.kind} evaluator does not accept hyperparameter(s) {unknown}")

    def domain(self, name: str) -> Optional[tuple]:
        """Finite set of admissible values for ``name``, or None when unrestricted."""
        return None

    def describe(self) -> str:
        return self.kind

    def evaluate(self, config: Configuration, seed: int, early_stopping: Optional[int] = None) -> TrialOutcome:
        raise NotImplementedError


def task_metrics(task: str, y, pred) -> dict[str, float]:
    out = {}
    for kind in TASK_METRICS[task]:
        try:
            out[kind] = compute_metric(kind, y, pred)
        except UndefinedMetricError:
            continue
    return out


RF_NAMES = frozenset({"depth", "trees", "msl", "max_p", "row_sample_ratio"})
GBT_NAMES = frozenset({"depth", "trees", "lr_rate", "l1", "l2", "min_child_weight",
                       "colsample_bytree", "early_stopping_rounds"})
MLP_NAMES = frozenset({"layer1", "layer2", "lr_rate", "batch_size", "l1", "l2", "dropout",
                       "max_epochs", "patience"})


class NativeEvaluator(Evaluator):
    """Train one of the built-in learners on a fixed train/valid pair.

    ``fixed`` supplies values for hyperparameters outside the searched space.
    """

    _NAMES = {"native_rf": RF_NAMES, "native_gbt": GBT_NAMES, "native_mlp": MLP_NAMES}

    def __init__(self, kind: str, train: Dataset, valid: Dataset, fixed: Optional[Mapping] = None,
                 dataset_id: str = ""):
        if kind not in self._NAMES:
            raise ConfigError(f"unknown native evaluator {kind!r}")
        self.kind = kind
        self.accepted = self._NAMES[kind]
        self.supports_early_stopping = kind in ("native_gbt", "native_mlp")
        self.train, self.valid = train, valid
        self.fixed = dict(fixed or {})
        self.dataset_id = dataset_id
        self.check_schema(list(self.fixed))

    def describe(self) -> str:
        return f"{self.kind}:{self.dataset_id}" if self.dataset_id else self.kind

    def fit(self, params: Mapping, seed: int, early_stopping: Optional[int] = None):
        hp = {**self.fixed, **params}
        if self.kind == "native_rf":
            max_p = hp.get("max_p")
            tree = TreeParams(depth=int(hp.get("depth", 10)), msl=int(hp.get("msl", 1)),
                              max_p=None if max_p is None else min(int(max_p), self.train.p))
            return fit_forest(self.train, ForestParams(tree, trees=int(hp.get("trees", 100)),
                                                       row_sample_ratio=float(hp.get("row_sample_ratio", 1.0)),
                                                       seed=seed))
        if self.kind == "native_gbt":
            es = early_stopping if early_stopping is not None else hp.get("early_stopping_rounds")
            params = GbtParams(depth=int(hp.get("depth", 6)), trees=int(hp.get("trees", 100)),
                               lr_rate=float(hp.get("lr_rate", 0.3)), alpha=float(hp.get("l1", 0.0)),
                               lam=float(hp.get("l2", 1.0)),
                               min_child_weight=float(hp.get("min_child_weight", 1.0)),
                               colsample_bytree=float(hp.get("colsample_bytree", 1.0)),
                               early_stopping_rounds=None if es is None else int(es), seed=seed)
            return fit_gbt(self.train, self.valid, params)
        patience = early_stopping if early_stopping is not None else hp.get("patience", 20)
        batch = hp.get("batch_size", 32)
        if isinstance(batch, float) and batch < 1:
            batch = max(1, int(round(batch * self.train.n)))
        params = MlpParams(layer1=int(hp.get("layer1", 64)), layer2=int(hp.get("layer2", 0)),
                           lr_rate=float(hp.get("lr_rate", 0.001)), batch_size=int(batch),
                           l1=float(hp.get("l1", 0.0)), l2=float(hp.get("l2", 0.0)),
                           dropout=float(hp.get("dropout", 0.0)),
                           max_epochs=int(hp.get("max_epochs", 1000)),
                           patience=None if patience is None else int(patience), seed=seed)
        return fit_mlp(self.train, self.valid, params)

    def evaluate(self, config, seed, early_stopping=None) -> TrialOutcome:
        model = self.fit(config.values, seed, early_stopping)
        train = task_metrics(self.train.task, self.train.target, model.predict(self.train.features))
        valid = task_metrics(self.valid.task, self.valid.target, model.predict(self.valid.features))
        return TrialOutcome(train, valid, int(model.fitted_rounds))


class SyntheticEvaluator(Evaluator):
    """Closed-form surface: ``surface(params)`` returns a metric value or a full outcome.

    A bare number is reported as ``metric`` on both splits.
    """

    kind = "synthetic"

    def __init__(self, surface: Callable, metric: str = "mse", names: Optional[Sequence[str]] = None,
                 domains: Optional[Mapping[str, Sequence]] = None):
        self.surface = surface
        self.metric = metric
        self.accepted = None if names is None else frozenset(names)
        self.domains = {k: tuple(v) for k, v in (domains or {}).items()}
        self.calls = 0

    def domain(self, name):
        return self.domains.get(name)

    def evaluate(self, config, seed, early_stopping=None) -> TrialOutcome:
        self.calls += 1
        value = self.surface(dict(config.values))
        if isinstance(value, TrialOutcome):
            return value
        value = float(value)
        return TrialOutcome({self.metric: value}, {self.metric: value}, None)


class ReplayEvaluator(Evaluator):
    """Answer trials by looking them up in a completed study.

    With early stopping, the ``trees`` value is chosen as the best recorded
    value for the remaining hyperparameters, mimicking a run that stops at
    the best round; the chosen count is returned as ``rounds``.
    """

    kind = "replay"
    supports_early_stopping = True

    def __init__(self, result, metric: str, rounds_param: str = "trees"):
        self.result = result
        self.metric = metric
        self.rounds_param = rounds_param
        self.accepted = frozenset(result.space.names)
        by_index = {}
        for rec in result.ok_records(metric):
            by_index[rec.index] = rec
        self._by_index = by_index
        self.lookups = 0
        self._seen: set[int] = set()

    def domain(self, name):
        return self.result.space[name].grid

    @property
    def distinct_lookups(self) -> int:
        return len(self._seen)

    def _lookup(self, values: Mapping):
        space = self.result.space
        try:
            index = space.index_of(values)
        except DomainError as exc:
            raise TrialError(f"config outside replay grid: {exc}") from None
        self.lookups += 1
        self._seen.add(index)
        rec = self._by_index.get(index)
        if rec is None:
            raise TrialError(f"no ok record for grid index {index}")
        return rec

    def evaluate(self, config, seed, early_stopping=None) -> TrialOutcome:
        values = dict(config.values)
        missing = set(self.result.space.names) - set(values)
        if early_stopping is not None and self.rounds_param in self.result.space.names:
            cap = values.get(self.rounds_param)
            candidates = [t for t in self.result.space[self.rounds_param].grid if cap is None or t <= cap]
            best_rec = None
            for t in candidates:
                rec = self._lookup({**values, self.rounds_param: t})
                if best_rec is None or is_better(rec.valid[self.metric], best_rec.valid[self.metric], self.metric):
                    best_rec = rec
            return TrialOutcome(best_rec.train, best_rec.valid, int(best_rec.config[self.rounds_param]))
        if missing:
            raise TrialError(f"replay needs values for {sorted(missing)}")
        rec = self._lookup(values)
        return TrialOutcome(rec.train, rec.valid, rec.rounds)


class ExternalEvaluator(Evaluator):
    """Run one child process per trial speaking the line-delimited JSON protocol.

    Request:  {"id": <int>, "seed": <int>, "params": {...}}
    Response: {"id": <int>, "train": {...}, "valid": {...}, "rounds": <int|null>}
    """

    kind = "external"

    def __init__(self, command: Sequence[str], timeout: float = 600.0, names: Optional[Sequence[str]] = None,
                 deterministic: bool = True, supports_early_stopping: bool = False, cwd=None):
        if isinstance(command, str):
            command = [command]
        self.command = list(command)
        self.timeout = timeout
        self.accepted = None if names is None else frozenset(names)
        self.deterministic = deterministic
        self.supports_early_stopping = supports_early_stopping
        self.cwd = cwd

    def describe(self) -> str:
        return "external:" + " ".join(self.command)

    def request_line(self, config: Configuration, seed: int, early_stopping=None) -> str:
        params = dict(config.values)
        if early_stopping is not None:
            params["early_stopping_rounds"] = early_stopping
        return json.dumps({"id": config.index, "seed": seed, "params": params}, separators=(",", ":")) + "\n"

    def evaluate(self, config, seed, early_stopping=None) -> TrialOutcome:
        line = self.request_line(config, seed, early_stopping)
        try:
            proc = subprocess.run(self.command, input=line.encode("utf-8"), capture_output=True,
                                  timeout=self.timeout, cwd=self.cwd)
        except subprocess.TimeoutExpired:
            raise TrialError("timeout") from None
        except OSError as exc:
            raise TrialError(f"cannot start evaluator: {exc}") from None
        if proc.returncode != 0:
            tail = proc.stderr.decode("utf-8", "replace").strip().splitlines()[-1:] or [""]
            raise TrialError(f"exit code {proc.returncode}: {tail[0][:200]}")
        return parse_response(proc.stdout.decode("utf-8", "replace"), config.index)


def _metric_map(obj, key):
    value = obj.get(key)
    if not isinstance(value, dict):
        raise ProtocolError(f"response field {key!r} must be an object")
    out = {}
    for k, v in value.items():
        if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
            raise ProtocolError(f"metric {key}.{k} is not a finite number")
        out[str(k)] = float(v)
    return out


def parse_response(stdout: str, expected_id: int) -> TrialOutcome:
    lines = [ln for ln in stdout.splitlines() if ln.strip()]
    if not lines:
        raise TrialError("malformed response: empty output")
    try:
        obj = json.loads(lines[0])
        if not isinstance(obj, dict):
            raise ProtocolError("response is not an object")
        if obj.get("id") != expected_id:
            raise ProtocolError(f"id mismatch: expected {expected_id}, got {obj.get('id')!r}")
        rounds = obj.get("rounds")
        if rounds is not None and (not isinstance(rounds, int) or isinstance(rounds, bool)):
            raise ProtocolError("rounds must be an integer or null")
        return TrialOutcome(_metric_map(obj, "train"), _metric_map(obj, "valid"), rounds)
    except json.JSONDecodeError as exc:
        raise TrialError(f"malformed response: {exc.msg}") from None
    except ProtocolError as exc:
        raise TrialError(f"protocol error: {exc}") from None

"""Run configurations against an evaluator and persist trial records."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import ConfigError, DomainError
from .metrics import GapReportRow, gap_stats, is_better, lower_is_better
from .search_space import Configuration, HyperParam, SearchSpace, build_space, space_to_spec

log = logging.getLogger(__name__)

RESULTS_FILE = "results.jsonl"
STUDY_FILE = "study.json"
RECORD_FIELDS = ("index", "config", "train", "valid", "rounds", "wall_time_s", "status")


@dataclass(frozen=True)
class TrialRecord:
    index: int
    config: Mapping[str, object]
    train: Mapping[str, float]
    valid: Mapping[str, float]
    rounds: Optional[int] = None
    wall_time_s: float = 0.0
    status: str = "ok"

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @property
    def failure_reason(self) -> Optional[str]:
        if self.ok:
            return None
        return self.status[len("failed("):-1] if self.status.startswith("failed(") else self.status

    @property
    def gap(self) -> dict[str, GapReportRow]:
        return {k: gap_stats(self.train[k], self.valid[k]) for k in self.valid if k in self.train}

    def to_json(self) -> dict:
        return {
            "index": self.index,
            "config": dict(self.config),
            "train": dict(self.train),
            "valid": dict(self.valid),
            "rounds": self.rounds,
            "wall_time_s": self.wall_time_s,
            "status": self.status,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "TrialRecord":
        missing = [f for f in RECORD_FIELDS if f not in obj]
        if missing:
            raise ConfigError(f"record lacks fields {missing}")
        return cls(int(obj["index"]), dict(obj["config"]), dict(obj["train"]), dict(obj["valid"]),
                   obj["rounds"], float(obj["wall_time_s"]), str(obj["status"]))

    def without_timing(self) -> "TrialRecord":
        return TrialRecord(self.index, self.config, self.train, self.valid, self.rounds, 0.0, self.status)


def failed(reason: str) -> str:
    return f"failed({reason})"


@dataclass
class StudyResult:
    space: SearchSpace
    records: list
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.records = sorted(self.records, key=lambda r: r.index)

    def ok_records(self, metric: Optional[str] = None, split: str = "valid") -> list:
        out = [r for r in self.records if r.ok]
        if metric is not None:
            out = [r for r in out if metric in getattr(r, split)]
        return out

    def skipped(self, metric: Optional[str] = None) -> int:
        return len(self.records) - len(self.ok_records(metric))

    def filter(self, predicate) -> "StudyResult":
        return StudyResult(self.space, [r for r in self.records if predicate(r.config)], dict(self.metadata))

    def metrics(self) -> list[str]:
        seen = []
        for r in self.ok_records():
            for k in r.valid:
                if k not in seen:
                    seen.append(k)
        return seen

    def same_metrics(self, other: "StudyResult") -> bool:
        """Equality ignoring wall times and metadata."""
        return ([r.without_timing() for r in self.records]
                == [r.without_timing() for r in other.records])


def trial_seed(study_seed: int, index: int) -> int:
    """Per-trial seed from (study seed, config index), independent of scheduling."""
    return int(np.random.SeedSequence([int(study_seed) & 0xFFFFFFFF, int(index)]).generate_state(1)[0])


def _select(space: SearchSpace, selection) -> list[Configuration]:
    if selection is None or selection == "all":
        return list(space.enumerate())
    if isinstance(selection, Mapping):
        if "sample" in selection:
            return space.sample(int(selection["sample"]), int(selection.get("seed", 0)))
        raise ConfigError(f"unknown selection {selection!r}")
    if isinstance(selection, (tuple, list)) and selection and selection[0] == "sample":
        return space.sample(int(selection[1]), int(selection[2]))
    if isinstance(selection, Iterable):
        return list(selection)
    raise ConfigError(f"unknown selection {selection!r}")


def run_trial(evaluator, config: Configuration, seed: int, early_stopping=None) -> TrialRecord:
    start = time.perf_counter()
    try:
        outcome = evaluator.evaluate(config, seed, early_stopping=early_stopping)
    except Exception as exc:  # failures become records, never abort the study
        elapsed = time.perf_counter() - start
        reason = getattr(exc, "reason", None) or f"{type(exc).__name__}: {exc}"
        return TrialRecord(config.index, config.as_dict(), {}, {}, None, elapsed, failed(reason))
    elapsed = time.perf_counter() - start
    return TrialRecord(config.index, config.as_dict(), dict(outcome.train), dict(outcome.valid),
                       outcome.rounds, elapsed, "ok")


def run_study(space: SearchSpace, evaluator, selection="all", parallelism: int = 1, seed: int = 0,
              early_stopping: Optional[int] = None, sink=None, metadata: Optional[dict] = None) -> StudyResult:
    """Evaluate the selected configurations, one record each.

    ``sink`` is an output directory: records are appended to ``results.jsonl``
    as they finish, and indices already present there are not re-run.
    """
    evaluator.check_schema(space.names)
    if early_stopping is not None and not evaluator.supports_early_stopping:
        raise ConfigError(f"evaluator {evaluator.kind} does not support early stopping")
    configs = _select(space, selection)
    meta = {"seed": seed, "evaluator": evaluator.describe(), "started": time.time()}
    meta.update(metadata or {})
    done: dict[int, TrialRecord] = {}
    writer = None
    if sink is not None:
        sink = Path(sink)
        sink.mkdir(parents=True, exist_ok=True)
        results_path = sink / RESULTS_FILE
        if results_path.exists():
            for rec in read_records(results_path):
                done[rec.index] = rec
        write_study_file(sink, space, meta)
        writer = results_path.open("a", encoding="utf-8")
    lock = threading.Lock()
    todo = [c for c in configs if c.index not in done]
    if done:
        log.info("resuming: %d of %d configurations already recorded", len(configs) - len(todo), len(configs))

    def work(config: Configuration) -> TrialRecord:
        rec = run_trial(evaluator, config, trial_seed(seed, config.index), early_stopping)
        if writer is not None:
            with lock:
                writer.write(json.dumps(rec.to_json(), separators=(",", ":")) + "\n")
                writer.flush()
        return rec

    fresh: list[TrialRecord] = []
    try:
        if parallelism <= 1 or len(todo) <= 1:
            fresh = [work(c) for c in todo]
        else:
            with ThreadPoolExecutor(max_workers=parallelism) as pool:
                fresh = list(pool.map(work, todo))
    finally:
        if writer is not None:
            writer.close()
    wanted = {c.index for c in configs}
    records = [r for i, r in done.items() if i in wanted] + fresh
    meta["finished"] = time.time()
    if sink is not None:
        write_study_file(sink, space, meta)
    return StudyResult(space, records, meta)


def best(result: StudyResult, metric: str, split: str = "valid") -> TrialRecord:
    """Record optimizing ``metric``; ties go to the lowest config index."""
    candidates = result.ok_records(metric, split)
    if not candidates:
        raise DomainError(f"no successful records carry metric {metric!r}")
    top = candidates[0]
    for r in candidates[1:]:
        if is_better(getattr(r, split)[metric], getattr(top, split)[metric], metric):
            top = r
    return top


def ranked(records: Sequence[TrialRecord], metric: str, split: str = "valid") -> list[TrialRecord]:
    """Best first, ties by config index."""
    sign = 1.0 if lower_is_better(metric) else -1.0
    return sorted(records, key=lambda r: (sign * getattr(r, split)[metric], r.index))


# persistence ----------------------------------------------------------------

def write_study_file(directory: Path, space: SearchSpace, metadata: dict) -> None:
    payload = {"space": space_to_spec(space), "metadata": metadata}
    (Path(directory) / STUDY_FILE).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def read_records(path) -> list[TrialRecord]:
    records = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(TrialRecord.from_json(json.loads(line)))
            except (json.JSONDecodeError, ConfigError, TypeError, ValueError) as exc:
                raise ConfigError(f"{path}:{lineno}: bad record: {exc}") from None
    return records


def infer_space(records: Sequence[TrialRecord]) -> SearchSpace:
    """Reconstruct a space from the distinct values seen in the records."""
    if not records:
        raise ConfigError("cannot infer a space from zero records")
    names = list(records[0].config)
    params = []
    for name in names:
        values = {r.config[name] for r in records}
        if all(isinstance(v, int) and not isinstance(v, bool) for v in values):
            params.append(HyperParam(name, "integer", tuple(sorted(values))))
        elif all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in values):
            params.append(HyperParam(name, "real", tuple(sorted(float(v) for v in values))))
        else:
            params.append(HyperParam(name, "nominal", tuple(sorted(values, key=str))))
    return SearchSpace(tuple(params))


def write_result(result: StudyResult, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / RESULTS_FILE
    with path.open("w", encoding="utf-8") as fh:
        for rec in result.records:
            fh.write(json.dumps(rec.to_json(), separators=(",", ":")) + "\n")
    write_study_file(directory, result.space, result.metadata)
    return path


def read_result(path) -> StudyResult:
    """Read a results directory or a bare results file.

    The space comes from a sibling ``study.json`` when present, otherwise it
    is inferred from the recorded configurations.
    """
    path = Path(path)
    study_file = path / STUDY_FILE if path.is_dir() else path.parent / STUDY_FILE
    results_path = path / RESULTS_FILE if path.is_dir() else path
    if not results_path.exists():
        raise ConfigError(f"no results file at {results_path}")
    records = read_records(results_path)
    latest: dict[int, TrialRecord] = {}
    for rec in records:
        latest[rec.index] = rec
    records = list(latest.values())
    if study_file.exists():
        payload = json.loads(study_file.read_text(encoding="utf-8"))
        space = build_space(payload["space"])
        metadata = payload.get("metadata", {})
    else:
        space = infer_space(records)
        metadata = {}
    return StudyResult(space, records, metadata)


def export_csv(result: StudyResult, path) -> None:
    metrics = sorted({k for r in result.records for k in (*r.train, *r.valid)})
    names = result.space.names
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", *names, *(f"train_{m}" for m in metrics), *(f"valid_{m}" for m in metrics),
                    "rounds", "wall_time_s", "status"])
        for r in result.records:
            w.writerow([r.index, *(r.config.get(n, "") for n in names),
                        *(_fmt(r.train.get(m)) for m in metrics), *(_fmt(r.valid.get(m)) for m in metrics),
                        "" if r.rounds is None else r.rounds, _fmt(r.wall_time_s), r.status])


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value) if math.isfinite(value) else ""
    return str(value)


def workers_from_env(default: int) -> int:
    raw = os.environ.get("HYPERGRID_WORKERS")
    if not raw:
        return default
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"HYPERGRID_WORKERS must be an integer, got {raw!r}") from None
    return max(1, value)

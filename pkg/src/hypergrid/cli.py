"""Command-line driver: ``run``, ``analyze``, ``strategy`` and ``simdata``.

One JSON config file describes a study::

    {
      "dataset":   {"kind": "sim", "n": 4000, "rho": 0.5, "seed": 0},
      "evaluator": {"kind": "native_gbt", "fixed": {"min_child_weight": 1}},
      "space":     [{"name": "depth", "kind": "integer", "grid": "range(3, 7)"}, ...],
      "run":       {"selection": "all", "parallelism": 1, "seed": 0},
      "analysis":  {"reports": ["anova", "gap"], "metric": "mse"},
      "strategy":  {"plan": "xgb2", "stage1": "full_grid"},
      "output":    "out/gbt-sim"
    }

Relative paths are resolved against the config file's directory. Command
line flags override config values; ``HYPERGRID_WORKERS`` overrides the
worker count.

Exit codes: 0 success, 2 configuration error, 3 runtime or evaluation
failure, 4 analysis precondition (degenerate or incomplete design).
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import analysis as an
from .datasets import SimSpec, gen_sim, load_bikeshare, read_csv, write_csv
from .errors import ConfigError, DegenerateDesignError, DesignError, DomainError, HypergridError
from .evaluators import ExternalEvaluator, NativeEvaluator, ReplayEvaluator
from .metrics import TASK_METRICS, check_kind
from .presets import ffnn_space, rf_space, xgb_space
from .search_space import SearchSpace, build_space
from .strategies import evaluate_strategy, ffnn_two_stage, parse_method, rf_two_stage, xgb_two_stage
from .study import best, read_result, run_study, workers_from_env, write_result

log = logging.getLogger("hypergrid")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_DESIGN = 0, 2, 3, 4
REPORTS = ("anova", "contour", "topk-corr", "gap", "concordance")
PLANS = ("rf2", "xgb2", "ffnn2")
SECTIONS = ("dataset", "evaluator", "space", "run", "analysis", "strategy", "output")
EVALUATOR_KINDS = ("native_rf", "native_gbt", "native_mlp", "external", "replay")
DATASET_KINDS = ("sim", "bikeshare", "csv", "none")


# config ------------------------------------------------------------------------

def _expect(value, types, where: str):
    types = types if isinstance(types, tuple) else (types,)
    if not isinstance(value, types) or (isinstance(value, bool) and bool not in types):
        names = "/".join(t.__name__ for t in types)
        raise ConfigError(f"{where}: expected {names}, got {value!r}")
    return value


@dataclass
class StudyConfig:
    dataset: dict = field(default_factory=lambda: {"kind": "none"})
    evaluator: dict = field(default_factory=dict)
    space: object = field(default_factory=list)
    run: dict = field(default_factory=dict)
    analysis: dict = field(default_factory=dict)
    strategy: dict = field(default_factory=dict)
    output: str = "hypergrid-out"
    base_dir: Path = field(default=Path("."), compare=False, repr=False)

    @classmethod
    def from_dict(cls, obj, base_dir: Path = Path(".")) -> "StudyConfig":
        _expect(obj, dict, "config")
        unknown = sorted(set(obj) - set(SECTIONS))
        if unknown:
            raise ConfigError(f"config: unknown section(s) {unknown}")
        cfg = cls(base_dir=base_dir)
        for name in ("dataset", "evaluator", "run", "analysis", "strategy"):
            if name in obj:
                setattr(cfg, name, copy.deepcopy(_expect(obj[name], dict, name)))
        if "space" in obj:
            cfg.space = copy.deepcopy(_expect(obj["space"], (list, dict, str), "space"))
        if "output" in obj:
            cfg.output = _expect(obj["output"], str, "output")
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return {"dataset": copy.deepcopy(self.dataset), "evaluator": copy.deepcopy(self.evaluator),
                "space": copy.deepcopy(self.space), "run": copy.deepcopy(self.run),
                "analysis": copy.deepcopy(self.analysis), "strategy": copy.deepcopy(self.strategy),
                "output": self.output}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def validate(self) -> None:
        kind = self.dataset.get("kind", "none")
        if kind not in DATASET_KINDS:
            raise ConfigError(f"dataset.kind: expected one of {DATASET_KINDS}, got {kind!r}")
        ekind = self.evaluator.get("kind")
        if ekind is not None and ekind not in EVALUATOR_KINDS:
            raise ConfigError(f"evaluator.kind: expected one of {EVALUATOR_KINDS}, got {ekind!r}")
        if "fixed" in self.evaluator:
            _expect(self.evaluator["fixed"], dict, "evaluator.fixed")
        if "parallelism" in self.run:
            _expect(self.run["parallelism"], int, "run.parallelism")
        if "seed" in self.run:
            _expect(self.run["seed"], int, "run.seed")
        if "early_stopping" in self.run and self.run["early_stopping"] is not None:
            _expect(self.run["early_stopping"], int, "run.early_stopping")
        if "reports" in self.analysis:
            for r in _expect(self.analysis["reports"], list, "analysis.reports"):
                if r not in REPORTS:
                    raise ConfigError(f"analysis.reports: unknown report {r!r}; choose from {REPORTS}")
        if "metric" in self.analysis:
            try:
                check_kind(self.analysis["metric"])
            except Exception:
                raise ConfigError(f"analysis.metric: unknown metric {self.analysis['metric']!r}") from None
        if "plan" in self.strategy and self.strategy["plan"] not in PLANS:
            raise ConfigError(f"strategy.plan: expected one of {PLANS}, got {self.strategy['plan']!r}")

    def path(self, value) -> Path:
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p


def load_config(path) -> StudyConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return StudyConfig.from_dict(obj, base_dir=path.parent)


def build_datasets(cfg: StudyConfig):
    d = cfg.dataset
    kind = d.get("kind", "none")
    try:
        if kind == "sim":
            try:
                spec = SimSpec(n=int(d.get("n", 4000)), rho=float(d.get("rho", 0.5)),
                               noise_sd=float(d.get("noise_sd", 1.0)), seed=int(d.get("seed", 0)),
                               train_ratio=float(d.get("train_ratio", 0.75)))
            except DomainError as exc:
                raise ConfigError(f"dataset: {exc}") from None
            return gen_sim(spec), f"sim(n={spec.n},rho={spec.rho},seed={spec.seed})"
        if kind == "bikeshare":
            if "path" not in d:
                raise ConfigError("dataset.path: required for bikeshare")
            sizes = tuple(d.get("sizes", (9384, 3997)))
            pair = load_bikeshare(cfg.path(d["path"]), sizes=sizes, seed=int(d.get("seed", 0)))
            return pair, f"bikeshare({d['path']})"
        if kind == "csv":
            for key in ("train", "valid", "task"):
                if key not in d:
                    raise ConfigError(f"dataset.{key}: required for csv")
            target = d.get("target", "y")
            pair = (read_csv(cfg.path(d["train"]), d["task"], target), read_csv(cfg.path(d["valid"]), d["task"], target))
            return pair, f"csv({d['train']})"
    except (TypeError, ValueError) as exc:
        if isinstance(exc, HypergridError):
            raise
        raise ConfigError(f"dataset: {exc}") from None
    return None, ""


def build_space_from(cfg: StudyConfig) -> SearchSpace:
    spec = cfg.space
    if isinstance(spec, str):
        spec = {"preset": spec}
    if isinstance(spec, dict):
        preset = spec.get("preset", "")
        family, _, dataset = preset.partition(":")
        if family == "rf":
            return rf_space(dataset or "bs")
        if family == "xgb":
            return xgb_space()
        if family == "ffnn":
            return ffnn_space(dataset or "bs")
        raise ConfigError(f"space.preset: unknown preset {preset!r} (rf:<ds>, xgb, ffnn:<ds>)")
    if not spec:
        raise ConfigError("space: no hyperparameters declared")
    return build_space(spec)


def build_evaluator(cfg: StudyConfig, datasets=None, dataset_id: str = "", replay: Optional[Path] = None,
                    metric: Optional[str] = None):
    e = cfg.evaluator
    kind = "replay" if replay is not None else e.get("kind")
    if kind is None:
        raise ConfigError("evaluator.kind: required")
    if kind.startswith("native_"):
        if datasets is None:
            raise ConfigError(f"evaluator {kind} needs a dataset block")
        train, valid = datasets
        return NativeEvaluator(kind, train, valid, fixed=e.get("fixed"), dataset_id=dataset_id)
    if kind == "external":
        command = e.get("command")
        if not command:
            raise ConfigError("evaluator.command: required for external evaluators")
        if isinstance(command, str):
            command = command.split()
        return ExternalEvaluator(command, timeout=float(e.get("timeout", 600)), names=e.get("names"),
                                 deterministic=bool(e.get("deterministic", True)),
                                 supports_early_stopping=bool(e.get("early_stopping", False)),
                                 cwd=str(cfg.base_dir))
    if kind == "replay":
        path = replay if replay is not None else e.get("results")
        if path is None:
            raise ConfigError("evaluator.results: required for replay")
        result = read_result(cfg.path(path))
        return ReplayEvaluator(result, metric or _default_metric(result))
    raise ConfigError(f"evaluator.kind: unsupported {kind!r}")


def _default_metric(result) -> str:
    """mse for continuous studies, logloss for binary ones, else the first recorded metric."""
    metrics = result.metrics()
    if not metrics:
        raise ConfigError("results contain no successful records")
    for preferred in ("mse", "logloss"):
        if preferred in metrics:
            return preferred
    return metrics[0]


def _output_dir(cfg: StudyConfig, flag: Optional[str]) -> Path:
    return Path(flag) if flag else cfg.path(cfg.output)


# commands ----------------------------------------------------------------------

def _summary_lines(result, metrics) -> list[str]:
    lines = [f"records: {len(result.records)} ok: {len(result.ok_records())} failed: {result.skipped()}"]
    for m in metrics:
        if not result.ok_records(m):
            continue
        rec = best(result, m)
        gap = rec.gap.get(m)
        rel = "" if gap is None or gap.relative_gap_pct is None else f" relative gap {gap.relative_gap_pct:.2f}%"
        gap_txt = "" if gap is None else f" gap {gap.gap:.6g}{rel}"
        lines.append(f"best by {m}: index {rec.index} valid {rec.valid[m]:.6g}{gap_txt} config {json.dumps(rec.config)}")
    return lines


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.parallelism is not None:
        cfg.run["parallelism"] = args.parallelism
    if args.seed is not None:
        cfg.run["seed"] = args.seed
    if args.sample is not None:
        cfg.run["selection"] = {"sample": args.sample, "seed": cfg.run.get("seed", 0)}
    if args.early_stopping is not None:
        cfg.run["early_stopping"] = args.early_stopping
    space = build_space_from(cfg)
    datasets, dataset_id = build_datasets(cfg)
    evaluator = build_evaluator(cfg, datasets, dataset_id)
    out = _output_dir(cfg, args.output)
    parallelism = workers_from_env(int(cfg.run.get("parallelism", 1)))
    result = run_study(space, evaluator, selection=cfg.run.get("selection", "all"), parallelism=parallelism,
                       seed=int(cfg.run.get("seed", 0)), early_stopping=cfg.run.get("early_stopping"),
                       sink=out, metadata={"dataset": dataset_id})
    lines = _summary_lines(result, result.metrics())
    (out / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    return EXIT_OK if result.ok_records() else EXIT_RUNTIME


def _parse_pairs(items) -> list[tuple[str, str]]:
    pairs = []
    for item in items or []:
        for chunk in item.split(";"):
            parts = [p.strip() for p in chunk.split(",") if p.strip()]
            if len(parts) != 2:
                raise ConfigError(f"contour pair must be 'a,b', got {chunk!r}")
            pairs.append((parts[0], parts[1]))
    return pairs


def cmd_analyze(args) -> int:
    result = read_result(args.results)
    reports = [r.strip() for r in args.reports.split(",") if r.strip()]
    for r in reports:
        if r not in REPORTS:
            raise ConfigError(f"unknown report {r!r}; choose from {', '.join(REPORTS)}")
    metric = check_kind(args.metric) if args.metric else _default_metric(result)
    if args.filter:
        result = an.apply_filter(result, args.filter)
    src = Path(args.results)
    out = Path(args.output) if args.output else (src if src.is_dir() else src.parent) / "analysis"
    out.mkdir(parents=True, exist_ok=True)
    summary = out / "summary.jsonl"
    if summary.exists():
        summary.unlink()
    status = EXIT_OK
    an.append_summary(summary, {"report": "input", "records": len(result.records), "metric": metric,
                                "filter": args.filter, "skipped": result.skipped(metric)})
    print(f"analyzing {len(result.records)} records by {metric} ({an.orientation_note(metric)})")
    for report in reports:
        if report == "anova":
            try:
                table = an.balanced_anova(result, metric)
                an.write_effects_csv(table.rows, out / "anova.csv")
                an.append_summary(summary, {"report": "anova", "n": table.n_records, "df_residual": table.df_residual,
                                            "skipped": table.skipped,
                                            "top": [[r.effect, r.f_share_pct] for r in table.rows[:5]]})
                for r in table.rows[:5]:
                    print(f"anova {r.effect:<24} F {r.f_stat:12.4f} share {r.f_share_pct:6.2f}% cum {r.cum_f_share_pct:6.2f}%")
            except DegenerateDesignError as exc:
                an.write_effects_csv(exc.fallback, out / "anova_ss_share.csv")
                an.append_summary(summary, {"report": "anova", "error": str(exc)})
                print(f"anova: {exc}", file=sys.stderr)
                status = EXIT_DESIGN
            except DesignError as exc:
                an.append_summary(summary, {"report": "anova", "error": str(exc)})
                print(f"anova: {exc}", file=sys.stderr)
                status = EXIT_DESIGN
        elif report == "contour":
            pairs = _parse_pairs(args.contour)
            if not pairs:
                raise ConfigError("contour report needs at least one --contour a,b pair")
            for a, b in pairs:
                grid = an.contour(result, a, b, metric)
                an.write_contour_csv(grid, out / f"contour_{a}_{b}.csv")
                an.append_summary(summary, {"report": "contour", "pair": [a, b], "skipped": grid.skipped})
        elif report == "topk-corr":
            k = min(args.k, len(result.ok_records(metric)))
            if k < args.k:
                print(f"topk-corr: only {k} records available, using k={k}", file=sys.stderr)
            mat = an.top_k_rank_correlations(result, metric, k=k)
            an.write_corr_csv(mat, out / f"topk_corr_{k}.csv")
            an.append_summary(summary, {"report": "topk-corr", "k": k, "names": list(mat.names),
                                        "rho": mat.rho.tolist()})
        elif report == "gap":
            rep = an.gap_report(result, metric, quantile=args.quantile)
            an.write_gap_csv(rep, out / "gap.csv")
            g = rep.best.row
            an.append_summary(summary, {"report": "gap", "best_index": rep.best.index, "best_gap": g.gap,
                                        "best_relative_gap_pct": g.relative_gap_pct,
                                        "overfit": len(rep.flagged_overfit), "underfit": len(rep.flagged_underfit),
                                        "skipped": rep.skipped})
            rel = "undefined" if g.relative_gap_pct is None else f"{g.relative_gap_pct:.2f}%"
            print(f"gap of best (index {rep.best.index}): {g.gap:.6g} relative {rel}")
        elif report == "concordance":
            conc = an.concordance(result, ks=tuple(args.overlap_k))
            an.write_concordance_csv(conc, out / "concordance.csv")
            an.append_summary(summary, {"report": "concordance", "rank_corr": conc.rank_corr,
                                        "overlap": {str(k): v for k, v in conc.overlap.items()},
                                        "effective_k": {str(k): v for k, v in conc.effective_k.items()},
                                        "warnings": conc.warnings})
            print(f"concordance: rank corr {conc.rank_corr:.4f} overlap "
                  + ", ".join(f"top-{k} {v:.3f}" for k, v in conc.overlap.items()))
    return status


def cmd_strategy(args) -> int:
    cfg = load_config(args.config) if args.config else StudyConfig()
    strat = dict(cfg.strategy)
    plan = args.plan or strat.get("plan")
    if plan not in PLANS:
        raise ConfigError(f"unknown plan {plan!r}; choose from {', '.join(PLANS)}")
    seed = args.seed if args.seed is not None else int(cfg.run.get("seed", 0))
    metric = args.metric or strat.get("metric") or cfg.analysis.get("metric")
    replay = Path(args.replay) if args.replay else None
    datasets, dataset_id = (None, "") if replay is not None else build_datasets(cfg)
    if metric is None:
        if datasets is not None:
            metric = TASK_METRICS[datasets[0].task][0 if datasets[0].task == "continuous" else 1]
        elif replay is not None:
            metric = _default_metric(read_result(replay))
        else:
            raise ConfigError("strategy.metric: required without a dataset")
    metric = check_kind(metric)
    evaluator = build_evaluator(cfg, datasets, dataset_id, replay=replay, metric=metric)
    if replay is not None:
        needed = {"rf2": ("depth", "trees", "max_p", "msl"), "xgb2": ("depth", "trees", "lr_rate", "l1", "l2"),
                  "ffnn2": ("lr_rate", "batch_size", "layer1", "layer2", "dropout", "l1", "l2")}[plan]
        missing = sorted(set(needed) - set(evaluator.result.space.names))
        if missing:
            raise ConfigError(f"replay grid lacks hyperparameters required by {plan}: {missing}")
    n = args.n or strat.get("n") or (datasets[0].n if datasets else None)
    p = args.p or strat.get("p") or (datasets[0].p if datasets else None)
    stage1 = args.stage1 or strat.get("stage1")
    method = parse_method(stage1, seed) if stage1 else None
    parallelism = workers_from_env(int(cfg.run.get("parallelism", 1)))
    if plan == "rf2":
        if n is None or p is None:
            raise ConfigError("rf2 needs the training size n and feature count p (strategy.n / strategy.p)")
        outcome = rf_two_stage(evaluator, int(n), int(p), metric, method or "full_grid", seed,
                               parallelism=parallelism)
    elif plan == "xgb2":
        outcome = xgb_two_stage(evaluator, metric, method or "full_grid", seed,
                                freeze_rounds=bool(strat.get("freeze_rounds", False)), parallelism=parallelism)
    else:
        if n is None:
            raise ConfigError("ffnn2 needs the training size n (strategy.n)")
        outcome = ffnn_two_stage(evaluator, int(n), metric, method, seed, parallelism=parallelism)

    out = _output_dir(cfg, args.output)
    out.mkdir(parents=True, exist_ok=True)
    for i, stage in enumerate(outcome.stage_results, start=1):
        write_result(stage, out / f"stage{i}")
    summary = {"plan": plan, "metric": metric, "r_opt": outcome.r_opt_config,
               "r_opt_valid": outcome.r_opt.valid.get(metric), "trials_spent": outcome.trials_spent}
    if replay is not None:
        ev = evaluate_strategy(evaluator.result, outcome, metric)
        summary.update(pct_better=ev.pct_better, pct_better_label=ev.label, rel_decrease=ev.rel_decrease,
                       grid_size=ev.n_records, lookups=evaluator.distinct_lookups)
    (out / "strategy.json").write_text(json.dumps(an._jsonable(summary), indent=1, sort_keys=True) + "\n",
                                       encoding="utf-8")
    for key in ("plan", "metric", "r_opt", "r_opt_valid", "trials_spent", "pct_better_label", "rel_decrease"):
        if key in summary:
            print(f"{key}: {json.dumps(an._jsonable(summary[key]))}")
    return EXIT_OK


def cmd_simdata(args) -> int:
    try:
        spec = SimSpec(n=args.n, rho=args.rho, noise_sd=args.noise_sd, seed=args.seed, train_ratio=args.train_ratio)
    except DomainError as exc:
        raise ConfigError(str(exc)) from None
    train, valid = gen_sim(spec)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_csv(train, out / "train.csv")
        write_csv(valid, out / "valid.csv")
    except OSError as exc:
        raise ConfigError(f"cannot write to {out}: {exc.strerror}") from None
    print(f"wrote {train.n} train and {valid.n} valid rows to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hypergrid", description="Grid hyperparameter studies and their analysis.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="evaluate a study's configurations")
    p.add_argument("config")
    p.add_argument("--output", help="results directory (overrides config 'output')")
    p.add_argument("--parallelism", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--sample", type=int, help="evaluate a random subset of this many configurations")
    p.add_argument("--early-stopping", type=int, dest="early_stopping")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("analyze", help="post-hoc reports over a results directory or file")
    p.add_argument("results")
    p.add_argument("--reports", default="anova,gap", help=f"comma list from {', '.join(REPORTS)}")
    p.add_argument("--metric")
    p.add_argument("--k", type=int, default=50, help="model count for topk-corr")
    p.add_argument("--filter", help="e.g. 'lr_rate > 0.01'")
    p.add_argument("--contour", action="append", help="hyperparameter pair 'a,b' (repeatable)")
    p.add_argument("--quantile", type=float, default=0.9, help="overfit flag quantile for the gap report")
    p.add_argument("--overlap-k", type=int, nargs="+", default=[50, 500], dest="overlap_k")
    p.add_argument("--output")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("strategy", help="run a two-stage reduced search")
    p.add_argument("config", nargs="?")
    p.add_argument("--plan", choices=PLANS)
    p.add_argument("--replay", help="answer trials from a completed full-grid results directory")
    p.add_argument("--stage1", help="'full_grid' or 'random(n[, seed])'")
    p.add_argument("--metric")
    p.add_argument("--seed", type=int)
    p.add_argument("--n", type=int, help="training size used to size the grids")
    p.add_argument("--p", type=int, help="feature count used for Max_p")
    p.add_argument("--output")
    p.set_defaults(func=cmd_strategy)

    p = sub.add_parser("simdata", help="write SIM train/valid CSV files")
    p.add_argument("--n", type=int, default=40_000)
    p.add_argument("--rho", type=float, default=0.5)
    p.add_argument("--noise-sd", type=float, default=1.0, dest="noise_sd")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-ratio", type=float, default=0.75, dest="train_ratio")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simdata)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DesignError as exc:
        print(f"design error: {exc}", file=sys.stderr)
        return EXIT_DESIGN
    except KeyboardInterrupt:
        print("interrupted; completed trials are kept in the results file", file=sys.stderr)
        return EXIT_RUNTIME
    except (HypergridError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

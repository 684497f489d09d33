import json
import sys
from pathlib import Path

import numpy as np
import pytest

from hypergrid.datasets import SimSpec, gen_sim
from hypergrid.errors import ConfigError, DomainError
from hypergrid.evaluators import (ExternalEvaluator, NativeEvaluator, ReplayEvaluator, SyntheticEvaluator,
                                  TrialError, TrialOutcome, parse_response)
from hypergrid.search_space import build_space
from hypergrid.study import (TrialRecord, best, export_csv, infer_space, ranked, read_result,
                             run_study, trial_seed, write_result)

STUB = [sys.executable, str(Path(__file__).parent / "stubs" / "stub_evaluator.py")]


def small_space():
    return build_space([("x", "real", [0.0, 0.25, 0.5, 0.75]), ("y", "real", [0.0, 0.3, 0.6, 0.9])])


def bowl(params):
    return (params["x"] - 0.5) ** 2 + (params["y"] - 0.3) ** 2


class NoisyEvaluator(SyntheticEvaluator):
    """Seed-dependent outcome, to expose any scheduling dependence."""

    def evaluate(self, config, seed, early_stopping=None):
        self.calls += 1
        rng = np.random.default_rng(seed)
        v = bowl(config.values) + rng.normal()
        return TrialOutcome({"mse": v * 0.5}, {"mse": v}, None)


class TestRunStudy:
    def test_one_record_per_config(self):
        res = run_study(small_space(), SyntheticEvaluator(bowl))
        assert [r.index for r in res.records] == list(range(16))
        assert all(r.ok for r in res.records)
        assert best(res, "mse").config == {"x": 0.5, "y": 0.3}

    def test_parallelism_does_not_change_results(self):
        a = run_study(small_space(), NoisyEvaluator(bowl), parallelism=1, seed=11)
        b = run_study(small_space(), NoisyEvaluator(bowl), parallelism=8, seed=11)
        assert a.same_metrics(b)

    def test_seed_changes_results(self):
        a = run_study(small_space(), NoisyEvaluator(bowl), seed=1)
        b = run_study(small_space(), NoisyEvaluator(bowl), seed=2)
        assert not a.same_metrics(b)

    def test_trial_seed_independent_of_order(self):
        assert trial_seed(3, 5) == trial_seed(3, 5)
        assert trial_seed(3, 5) != trial_seed(3, 6)

    def test_sample_selection(self):
        res = run_study(small_space(), SyntheticEvaluator(bowl), selection={"sample": 5, "seed": 0})
        assert len(res.records) == 5
        assert len({r.index for r in res.records}) == 5

    def test_unknown_hp_rejected_before_any_trial(self):
        ev = SyntheticEvaluator(bowl, names=["x"])
        with pytest.raises(ConfigError, match="y"):
            run_study(small_space(), ev)
        assert ev.calls == 0

    def test_early_stopping_requires_support(self):
        with pytest.raises(ConfigError):
            run_study(small_space(), SyntheticEvaluator(bowl), early_stopping=10)

    def test_failures_become_records(self):
        def surface(p):
            if p["x"] == 0.25:
                raise TrialError("diverged")
            return bowl(p)
        res = run_study(small_space(), SyntheticEvaluator(surface))
        bad = [r for r in res.records if not r.ok]
        assert len(bad) == 4 and bad[0].failure_reason == "diverged"
        assert bad[0].status == "failed(diverged)"
        assert res.skipped("mse") == 4
        assert best(res, "mse").ok

    def test_best_ties_go_to_lowest_index(self):
        res = run_study(small_space(), SyntheticEvaluator(lambda p: 1.0))
        assert best(res, "mse").index == 0
        assert [r.index for r in ranked(res.records, "mse")] == list(range(16))

    def test_best_orientation(self):
        res = run_study(small_space(), SyntheticEvaluator(lambda p: p["x"] + p["y"], metric="auc"))
        assert best(res, "auc").config == {"x": 0.75, "y": 0.9}

    def test_best_without_records(self):
        res = run_study(small_space(), SyntheticEvaluator(bowl))
        with pytest.raises(DomainError):
            best(res, "auc")


class TestPersistence:
    def test_roundtrip(self, tmp_path):
        res = run_study(small_space(), NoisyEvaluator(bowl), seed=4)
        write_result(res, tmp_path)
        back = read_result(tmp_path)
        assert back.same_metrics(res)
        assert back.space.names == res.space.names
        assert read_result(tmp_path / "results.jsonl").same_metrics(res)

    def test_sink_resume_skips_recorded(self, tmp_path):
        space = small_space()
        first = run_study(space, NoisyEvaluator(bowl), selection=list(space.enumerate())[:6], seed=2, sink=tmp_path)
        assert len(first.records) == 6
        ev = NoisyEvaluator(bowl)
        full = run_study(space, ev, seed=2, sink=tmp_path)
        assert ev.calls == 10
        assert full.same_metrics(run_study(space, NoisyEvaluator(bowl), seed=2))
        lines = (tmp_path / "results.jsonl").read_text().splitlines()
        assert len(lines) == 16

    def test_infer_space_without_study_file(self, tmp_path):
        res = run_study(small_space(), SyntheticEvaluator(bowl))
        write_result(res, tmp_path)
        (tmp_path / "study.json").unlink()
        back = read_result(tmp_path)
        assert back.space.size == 16
        assert infer_space(res.records).names == ["x", "y"]

    def test_bad_record_line(self, tmp_path):
        (tmp_path / "results.jsonl").write_text('{"index": 0}\n')
        with pytest.raises(ConfigError, match=":1"):
            read_result(tmp_path)

    def test_record_json(self):
        rec = TrialRecord(3, {"x": 1}, {"mse": 0.5}, {"mse": 0.7}, 12, 0.1, "ok")
        assert TrialRecord.from_json(json.loads(json.dumps(rec.to_json()))) == rec
        assert rec.gap["mse"].gap == pytest.approx(0.2)

    def test_export_csv(self, tmp_path):
        def surface(p):
            if p["x"] == 0.0:
                raise TrialError("nope")
            return bowl(p)
        res = run_study(small_space(), SyntheticEvaluator(surface))
        export_csv(res, tmp_path / "r.csv")
        rows = (tmp_path / "r.csv").read_text().splitlines()
        assert rows[0] == "index,x,y,train_mse,valid_mse,rounds,wall_time_s,status"
        assert len(rows) == 17
        assert rows[1].endswith("failed(nope)")


class TestExternal:
    def test_sixteen_trial_study(self, tmp_path):
        ev = ExternalEvaluator(STUB, timeout=30)
        res = run_study(small_space(), ev, seed=0, parallelism=4, sink=tmp_path)
        assert len(res.records) == 16 and all(r.ok for r in res.records)
        assert best(res, "mse").config == {"x": 0.25, "y": 0.6}

    def test_failure_paths_do_not_abort(self):
        space = build_space([("mode", "nominal", ["ok", "wrong_id", "crash", "garbage", "sleep"])])
        res = run_study(space, ExternalEvaluator(STUB, timeout=2))
        status = {r.config["mode"]: r for r in res.records}
        assert status["ok"].ok
        assert "id mismatch" in status["wrong_id"].failure_reason
        assert status["crash"].failure_reason.startswith("exit code 5")
        assert "deliberate failure" in status["crash"].failure_reason
        assert status["garbage"].failure_reason.startswith("malformed response")
        assert status["sleep"].failure_reason == "timeout"

    def test_request_line(self):
        cfg = small_space().config_at(5)
        line = ExternalEvaluator(STUB).request_line(cfg, 42)
        assert line.endswith("\n") and "\n" not in line[:-1]
        assert json.loads(line) == {"id": 5, "seed": 42, "params": {"x": 0.25, "y": 0.3}}

    @pytest.mark.parametrize("text,match", [
        ('{"id": 1, "train": {}, "valid": {"mse": NaN}}', "finite"),
        ('{"id": 1, "train": {}, "valid": {}, "rounds": 1.5}', "rounds"),
        ('[1]', "object"),
        ('', "empty"),
    ])
    def test_parse_response_rejects(self, text, match):
        with pytest.raises(TrialError, match=match):
            parse_response(text, 1)

    def test_missing_command(self):
        space = build_space([("x", "real", [0.0])])
        res = run_study(space, ExternalEvaluator(["/nonexistent/evaluator"]))
        assert res.records[0].failure_reason.startswith("cannot start")


class TestNativeAndReplay:
    def test_native_rf_deterministic(self):
        tr, va = gen_sim(SimSpec(n=600, seed=0))
        space = build_space([("depth", "integer", [2, 4]), ("trees", "integer", [10]), ("msl", "integer", [5])])
        a = run_study(space, NativeEvaluator("native_rf", tr, va), seed=9)
        b = run_study(space, NativeEvaluator("native_rf", tr, va), seed=9, parallelism=2)
        assert a.same_metrics(b)
        assert {"mse", "r2"} <= set(a.records[0].valid)

    def test_native_rejects_foreign_names(self):
        tr, va = gen_sim(SimSpec(n=100, seed=0))
        with pytest.raises(ConfigError, match="layer1"):
            run_study(build_space([("layer1", "integer", [4])]), NativeEvaluator("native_rf", tr, va))

    def test_replay_lookup_and_miss(self):
        full = run_study(small_space(), SyntheticEvaluator(bowl))
        ev = ReplayEvaluator(full, "mse")
        again = run_study(small_space(), ev)
        assert again.same_metrics(full)
        assert ev.distinct_lookups == 16
        other = build_space([("x", "real", [0.1]), ("y", "real", [0.0])])
        res = run_study(other, ReplayEvaluator(full, "mse"))
        assert not res.records[0].ok

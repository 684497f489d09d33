import math

import pytest

from hypergrid.errors import ConfigError, DomainError
from hypergrid.evaluators import ReplayEvaluator, SyntheticEvaluator, TrialOutcome
from hypergrid.search_space import build_space, geometric_grid
from hypergrid.strategies import (Carry, Stage, StagePlan, evaluate_strategy, ffnn_plan, ffnn_two_stage,
                                  parse_method, rf_plan, rf_two_stage, run_plan, snap_free, snap_pinned,
                                  xgb_plan, xgb_two_stage)
from hypergrid.study import best, run_study


class EarlyStoppingSurface(SyntheticEvaluator):
    """Surface whose best tree count is a function of the learning rate."""

    supports_early_stopping = True

    def evaluate(self, config, seed, early_stopping=None):
        self.calls += 1
        p = dict(config.values)
        if early_stopping is not None:
            rounds = min(p["trees"], max(1, int(round(20.0 / p["lr_rate"]))))
            p["trees"] = rounds
        else:
            rounds = None
        v = float(self.surface(p))
        return TrialOutcome({"mse": 0.8 * v}, {"mse": v}, rounds)


def xgb_surface(p):
    return ((p["depth"] - 5) ** 2 + 50 * (p["lr_rate"] - 0.05) ** 2 + (p["l1"] - 0.1) ** 2
            + (math.log10(p["l2"] + 1e-3) + 1) ** 2 + 1e-4 * abs(p["trees"] * p["lr_rate"] - 20))


class TestMethods:
    def test_parse(self):
        assert parse_method("full_grid") == "full_grid"
        assert parse_method("random(30)", seed=4) == ("random", 30, 4)
        assert parse_method("random(30, 7)") == ("random", 30, 7)

    @pytest.mark.parametrize("text", ["grid", "random()", "random(a)", "random(1,2,3)"])
    def test_parse_errors(self, text):
        with pytest.raises(ConfigError):
            parse_method(text)

    def test_stage_validation(self):
        with pytest.raises(ConfigError):
            Stage(free={"a": [1]}, pinned={"a": 1})
        with pytest.raises(ConfigError):
            Stage(free={"a": [1]}, pinned={}, method=("random", 0, 1))
        with pytest.raises(ConfigError):
            StagePlan("x", (Stage(free={"a": [1]}, pinned={"b": Carry("b")}),), "mse")


class TestSnapping:
    def test_free_range(self):
        assert snap_free([10, 11, 12, 20], [3, 5, 7, 9, 11, 13, 15, 17, 19]) == [11, 13, 15, 17, 19]

    def test_outside_range(self):
        assert snap_free([2, 30], [3, 5, 7]) == [3, 5, 7]

    def test_tie_goes_inward(self):
        # 10 is equidistant from 9 and 11: lower endpoint snaps up, upper endpoint snaps down
        assert snap_free([10, 16], [9, 11, 13, 15, 17]) == [11, 13, 15]

    def test_no_domain(self):
        assert snap_free([3, 1, 2, 1], None) == [1, 2, 3]

    def test_pinned(self):
        assert snap_pinned(300, [100, 200, 400]) == 200
        assert snap_pinned(300, [100, 250, 350]) == 250
        assert snap_pinned(0.1, None) == 0.1


class TestRF:
    def test_plan_shapes(self):
        plan = rf_plan(n=400, p=4, metric="mse")
        s1, s2 = plan.stages
        assert s1.free["depth"] == list(range(10, 21))
        assert s1.free["msl"] == geometric_grid(1, 20, 10, integerize=True)
        assert s1.pinned == {"max_p": 2, "trees": 300}
        assert s2.free["max_p"] == [2, 4]

    def test_max_p_multiples_capped(self):
        assert rf_plan(n=100, p=11, metric="mse").stages[1].free["max_p"] == [3, 6, 9, 11]
        assert rf_plan(n=100, p=1, metric="mse").stages[1].free["max_p"] == [1]

    def test_separable_surface_recovers_optimum(self):
        def surface(p):
            return (p["depth"] - 14) ** 2 + (math.log(p["msl"]) - math.log(5)) ** 2 + (p["max_p"] - 6) ** 2
        ev = SyntheticEvaluator(surface)
        out = rf_two_stage(ev, n=400, p=11)
        assert out.r_opt.config == {"depth": 14, "trees": 300, "max_p": 6, "msl": 5}
        assert out.r_opt_stage == 1
        assert out.trials_spent == 11 * len(geometric_grid(1, 20, 10, integerize=True)) + 4
        assert ev.calls == out.trials_spent
        assert list(out.stage_results[0].space.names) == ["depth", "trees", "max_p", "msl"]

    def test_stage2_carries_stage1_best(self):
        out = rf_two_stage(SyntheticEvaluator(lambda p: abs(p["depth"] - 12) + 1.0 / p["msl"] + 0 * p["max_p"]),
                           n=100, p=4)
        s2 = out.stage_results[1]
        assert {r.config["depth"] for r in s2.records} == {12}
        assert {r.config["msl"] for r in s2.records} == {10}

    def test_no_improvement_keeps_stage1(self):
        out = rf_two_stage(SyntheticEvaluator(lambda p: p["depth"] + p["msl"] - (p["max_p"] == 2)), n=100, p=4)
        assert out.r_opt_stage == 0

    def test_random_stage1(self):
        ev = SyntheticEvaluator(lambda p: p["depth"] + p["msl"])
        out = rf_two_stage(ev, n=100, p=4, stage1_method=("random", 5, 1))
        assert len(out.stage_results[0].records) == 5


class TestXGB:
    def test_plan(self):
        plan = xgb_plan("mse")
        s1, s2 = plan.stages
        assert len(s1.free["depth"]) * len(s1.free["lr_rate"]) == 40
        assert s1.free["lr_rate"][0] == pytest.approx(0.02) and s1.free["lr_rate"][-1] == pytest.approx(0.1)
        assert s2.free["l1"][0] == 0.0 and len(s2.free["l1"]) == 9
        assert s2.free["l1"][-1] == pytest.approx(15.0)
        assert s1.early_stopping == 20 and s2.early_stopping == 20

    def test_recovers_optimum_and_realized_rounds(self):
        ev = EarlyStoppingSurface(xgb_surface)
        out = xgb_two_stage(ev)
        assert len(out.stage_results[0].records) == 40
        assert out.trials_spent == 40 + 81
        cfg = out.r_opt_config
        assert cfg["depth"] == 5 and cfg["l1"] == 0.0
        assert cfg["trees"] == out.r_opt.rounds <= 500
        assert out.r_opt.config["trees"] == 500

    def test_freeze_rounds(self):
        out = xgb_two_stage(EarlyStoppingSurface(xgb_surface), freeze_rounds=True)
        s1_best = best(out.stage_results[0], "mse")
        assert {r.config["trees"] for r in out.stage_results[1].records} == {s1_best.rounds}

    def test_requires_early_stopping(self):
        with pytest.raises(ConfigError):
            xgb_two_stage(SyntheticEvaluator(xgb_surface))


class TestFFNN:
    def test_plan(self):
        plan = ffnn_plan(9384, "mse")
        s1, s2 = plan.stages
        assert s1.free["batch_size"] == [469, 938, 1408, 1877]
        assert all(v < 0.01 for v in s1.free["lr_rate"])
        assert s1.pinned == {"l1": 0.0, "l2": 0.0}
        assert s1.method == ("random", 200, 0)
        assert len(s2.free["l1"]) * len(s2.free["l2"]) == 12

    def test_lr_cap(self):
        assert ffnn_plan(100, "mse", grids={"lr_rate": [0.001, 0.01, 0.1]}).stages[0].free["lr_rate"] == [0.001]
        with pytest.raises(ConfigError):
            ffnn_plan(100, "mse", grids={"lr_rate": [0.01, 0.1]})

    def test_penalty_only_hurts(self):
        def surface(p):
            return (p["layer1"] - 256) ** 2 / 1e4 + p["dropout"] + 100 * p["l1"] + 10 * p["l2"]
        out = ffnn_two_stage(SyntheticEvaluator(surface), n=2000, stage1_method=("random", 60, 3))
        assert out.trials_spent == 72
        assert out.r_opt.config["l1"] == 0.0 and out.r_opt.config["l2"] == 0.0
        assert out.r_opt_stage == 0


class TestEvaluateStrategy:
    def grid(self):
        space = build_space([("a", "integer", [1, 2, 3, 4, 5]), ("b", "integer", [1, 2, 3, 4])])
        return run_study(space, SyntheticEvaluator(lambda p: (p["a"] - 3) ** 2 + (p["b"] - 2) ** 2 + 1.0))

    def test_best(self):
        g = self.grid()
        ev = evaluate_strategy(g, best(g, "mse"), "mse")
        assert ev.is_best and ev.label == "best" and ev.pct_better == 0.0 and ev.rel_decrease == 0.0

    def test_fraction_better(self):
        g = self.grid()
        rec = next(r for r in g.records if r.config == {"a": 3, "b": 3})
        ev = evaluate_strategy(g, rec, "mse")
        assert ev.n_better == 1 and ev.label == "5.00%"
        assert ev.rel_decrease == pytest.approx(100.0)

    def test_replayed_plan_reaches_grid_optimum(self):
        space = build_space([("depth", "integer", [10, 14, 18]), ("trees", "integer", [300]),
                             ("max_p", "integer", [2, 4]), ("msl", "integer", [1, 4, 20])])
        g = run_study(space, SyntheticEvaluator(lambda p: abs(p["depth"] - 14) + abs(p["msl"] - 4)
                                                + (p["max_p"] == 2)))
        ev = ReplayEvaluator(g, "mse")
        out = rf_two_stage(ev, n=400, p=4)
        assert evaluate_strategy(g, out, "mse").label == "best"

    def test_empty_grid(self):
        g = run_study(build_space([("a", "integer", [1])]), SyntheticEvaluator(lambda p: 1.0, metric="auc"))
        with pytest.raises(DomainError):
            evaluate_strategy(g, g.records[0], "mse")


def test_run_plan_reports_empty_stage():
    from hypergrid.evaluators import TrialError

    def surface(p):
        raise TrialError("always")
    plan = StagePlan("x", (Stage(free={"a": [1, 2]}, pinned={}),), "mse")
    with pytest.raises(DomainError, match="no successful"):
        run_plan(SyntheticEvaluator(surface), plan)


def test_zero_reference_metric():
    g = run_study(build_space([("a", "integer", [0, 1])]), SyntheticEvaluator(lambda p: float(p["a"])))
    assert evaluate_strategy(g, g.records[0], "mse").rel_decrease == 0.0
    assert math.isnan(evaluate_strategy(g, g.records[1], "mse").rel_decrease)

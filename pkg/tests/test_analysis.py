import itertools
import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hypergrid.analysis import (append_summary, balanced_anova, concordance, contour, gap_report, spearman,
                                top_effects, top_k, top_k_rank_correlations, write_contour_csv,
                                write_corr_csv, write_effects_csv, write_gap_csv)
from hypergrid.errors import ConfigError, DegenerateDesignError, DesignError, DomainError
from hypergrid.evaluators import SyntheticEvaluator, TrialError, TrialOutcome
from hypergrid.presets import xgb_space
from hypergrid.search_space import build_space
from hypergrid.study import StudyResult, TrialRecord, run_study
from oracles import naive_anova, rank_pearson

NAMES = "abcd"


def design(levels):
    return build_space([(NAMES[i], "integer", list(range(m))) for i, m in enumerate(levels)])


def study_from_cells(levels, values):
    """StudyResult whose valid mse at level tuple c is values[c]."""
    space = design(levels)
    return run_study(space, SyntheticEvaluator(lambda p: values[tuple(p[n] for n in NAMES[:len(levels)])]))


def random_design(rng):
    k = int(rng.integers(3, 5))
    levels = tuple(int(v) for v in rng.integers(2, 5, size=k))
    cells = {c: float(rng.normal()) for c in itertools.product(*(range(m) for m in levels))}
    return levels, cells


class TestAnovaOracle:
    @pytest.mark.parametrize("seed", range(10))
    def test_matches_naive(self, seed):
        levels, cells = random_design(np.random.default_rng(seed))
        table = balanced_anova(study_from_cells(levels, cells), "mse")
        ref = naive_anova(cells, levels)
        ms_res = ref["residual"][0] / ref["residual"][1]
        for key, (ss, df) in ref.items():
            if not isinstance(key, tuple):
                continue
            row = table.row(":".join(NAMES[i] for i in key))
            assert row.df == df
            assert row.ss == pytest.approx(ss, rel=1e-9, abs=1e-12)
            assert row.f_stat == pytest.approx((ss / df) / ms_res, rel=1e-9)
        assert table.ss_residual == pytest.approx(ref["residual"][0], rel=1e-9)
        assert table.df_residual == ref["residual"][1]

    def test_decomposition_identity(self):
        levels, cells = random_design(np.random.default_rng(99))
        t = balanced_anova(study_from_cells(levels, cells), "mse")
        assert sum(r.ss for r in t) + t.ss_residual == pytest.approx(t.ss_total, rel=1e-12)
        assert sum(r.df for r in t) + t.df_residual == t.n_records - 1
        assert sum(r.f_share_pct for r in t) == pytest.approx(100.0, abs=1e-9)
        assert t[len(t) - 1].cum_f_share_pct == pytest.approx(100.0, abs=1e-9)

    def test_sorted_by_f(self):
        levels, cells = random_design(np.random.default_rng(5))
        t = balanced_anova(study_from_cells(levels, cells), "mse")
        fs = [r.f_stat for r in t]
        assert fs == sorted(fs, reverse=True)

    def test_affine_invariance_of_f(self):
        levels, cells = random_design(np.random.default_rng(3))
        t1 = balanced_anova(study_from_cells(levels, cells), "mse")
        t2 = balanced_anova(study_from_cells(levels, {c: 5.0 - 3.0 * v for c, v in cells.items()}), "mse")
        for r in t1:
            assert t2.row(r.effect).f_stat == pytest.approx(r.f_stat, rel=1e-9)
            assert t2.row(r.effect).ss == pytest.approx(9.0 * r.ss, rel=1e-9)

    def test_level_relabelling_invariance(self):
        levels, cells = random_design(np.random.default_rng(4))
        perm = np.random.default_rng(0).permutation(levels[0])
        shuffled = {(int(perm[c[0]]),) + c[1:]: v for c, v in cells.items()}
        t1 = balanced_anova(study_from_cells(levels, cells), "mse")
        t2 = balanced_anova(study_from_cells(levels, shuffled), "mse")
        for r in t1:
            assert t2.row(r.effect).ss == pytest.approx(r.ss, rel=1e-9)

    def test_planted_effects_ranked(self):
        rng = np.random.default_rng(7)
        cells = {c: 3.0 * (c[0] == 3) + 1.0 * (c[1] == 3) + rng.normal(0, 0.05)
                 for c in itertools.product(range(4), range(4), range(4))}
        t = balanced_anova(study_from_cells((4, 4, 4), cells), "mse")
        assert [r.effect for r in top_effects(t, 2)] == ["a", "b"]
        assert not t.row("a").is_interaction and t.row("a:b").is_interaction

    def test_additive_surface_is_degenerate(self):
        cells = {c: float(c[0] + 2 * c[1] + 3 * c[2]) for c in itertools.product(range(3), range(3), range(2))}
        with pytest.raises(DegenerateDesignError) as info:
            balanced_anova(study_from_cells((3, 3, 2), cells), "mse")
        fallback = info.value.fallback
        assert fallback[0].effect == "c" or fallback[0].effect == "b"
        assert all(math.isnan(r.f_stat) for r in fallback)
        assert sum(r.f_share_pct for r in fallback) == pytest.approx(100.0)

    def test_two_level_three_factor_has_residual(self):
        # 2x2x2: one residual degree of freedom, the three-way interaction
        cells = {c: float(np.prod(c)) + 0.1 * c[0] for c in itertools.product(range(2), repeat=3)}
        t = balanced_anova(study_from_cells((2, 2, 2), cells), "mse")
        assert t.df_residual == 1

    def test_too_few_factors(self):
        cells = {c: float(sum(c)) for c in itertools.product(range(3), range(3))}
        with pytest.raises(DesignError, match="at least 3"):
            balanced_anova(study_from_cells((3, 3), cells), "mse")

    def test_missing_cell_reported(self):
        levels, cells = random_design(np.random.default_rng(1))
        res = study_from_cells(levels, cells)
        res = StudyResult(res.space, res.records[1:], {})
        with pytest.raises(DesignError, match="0 records"):
            balanced_anova(res, "mse")

    def test_failed_cell_breaks_design(self):
        def surface(p):
            if p == {"a": 0, "b": 0, "c": 0}:
                raise TrialError("boom")
            return float(p["a"] * p["b"] + p["c"] ** 2 + 0.3 * p["a"] * p["b"] * p["c"])
        res = run_study(design((3, 3, 3)), SyntheticEvaluator(surface))
        with pytest.raises(DesignError):
            balanced_anova(res, "mse")

    def test_filter_xgb_grid(self):
        def surface(p):
            return (p["lr_rate"] * p["trees"] / 50 - 0.3) ** 2 + 0.01 * p["depth"] + 0.001 * p["l1"] * p["l2"] \
                + 0.002 * math.sin(p["depth"] * p["trees"]) + 0.01 * p["lr_rate"] * p["depth"] * p["l1"]
        res = run_study(xgb_space(), SyntheticEvaluator(surface))
        assert len(res.records) == 6250
        t = balanced_anova(res, "mse", filter="lr_rate != 0.01")
        assert t.n_records == 5625
        assert t.row("lr_rate").df == 8

    def test_filter_unknown_name(self):
        levels, cells = random_design(np.random.default_rng(1))
        with pytest.raises(ConfigError):
            balanced_anova(study_from_cells(levels, cells), "mse", filter="zeta > 1")

    def test_filter_to_single_level_drops_factor(self):
        cells = {c: float(c[0] * c[1] + c[2] + 0.1 * c[0] * c[1] * c[2] ** 2)
                 for c in itertools.product(range(3), range(3), range(3), range(2))}
        t = balanced_anova(study_from_cells((3, 3, 3, 2), cells), "mse", filter="d == 0")
        assert t.n_records == 27
        with pytest.raises(KeyError):
            t.row("d")

    def test_top_effects_bounds(self):
        levels, cells = random_design(np.random.default_rng(2))
        t = balanced_anova(study_from_cells(levels, cells), "mse")
        with pytest.raises(DomainError):
            top_effects(t, 0)
        with pytest.raises(DomainError):
            top_effects(t, len(t) + 1)


class TestContour:
    def test_means_and_counts(self):
        space = build_space([("lr", "real", [0.1, 0.2]), ("trees", "integer", [1, 2, 3]), ("d", "integer", [0, 1])])
        res = run_study(space, SyntheticEvaluator(lambda p: p["lr"] * p["trees"] + p["d"]))
        g = contour(res, "lr", "trees", "mse")
        assert g.cell_counts.tolist() == [[2, 2, 2], [2, 2, 2]]
        assert g.cell_means[0, 0] == pytest.approx(0.1 + 0.5)
        assert g.cell_means[1, 2] == pytest.approx(0.6 + 0.5)
        assert g.as_r2(2.0)[0, 0] == pytest.approx(1 - 0.6 / 2.0)

    def test_empty_cells_are_nan(self, tmp_path):
        space = build_space([("lr", "real", [0.1, 0.2]), ("trees", "integer", [1, 2])])
        res = run_study(space, SyntheticEvaluator(lambda p: 1.0))
        g = contour(res, "lr", "trees", "mse", filter="not (lr == 0.2 and trees == 2)")
        assert np.isnan(g.cell_means[1, 1]) and g.cell_counts[1, 1] == 0
        write_contour_csv(g, tmp_path / "c.csv")
        assert (tmp_path / "c.csv").read_text().splitlines()[0].startswith("lr\\trees")

    def test_unknown_hp(self):
        res = run_study(build_space([("a", "integer", [1, 2])]), SyntheticEvaluator(lambda p: 1.0))
        with pytest.raises(DomainError):
            contour(res, "a", "b", "mse")


class TestSpearman:
    def test_worked_example(self):
        assert spearman([1, 2, 3], [2, 3, 1]) == pytest.approx(-0.5, abs=1e-15)

    def test_constant_is_nan(self):
        assert math.isnan(spearman([1, 1, 1], [1, 2, 3]))

    def test_bad_input(self):
        with pytest.raises(DomainError):
            spearman([1, 2], [1, 2, 3])
        with pytest.raises(DomainError):
            spearman([1], [1])

    @settings(max_examples=100)
    @given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5)), min_size=3, max_size=40))
    def test_matches_rank_pearson_with_ties(self, pairs):
        x, y = zip(*pairs)
        got = spearman(x, y)
        if len(set(x)) == 1 or len(set(y)) == 1:
            assert math.isnan(got)
        else:
            assert got == pytest.approx(rank_pearson(x, y), abs=1e-12)


class TestTopK:
    def grid(self):
        space = build_space([("a", "integer", [1, 2, 3, 4]), ("b", "integer", [1, 2, 3, 4])])
        # good region runs along a == b
        return run_study(space, SyntheticEvaluator(lambda p: abs(p["a"] - p["b"]) + 0.01 * p["a"]))

    def test_planted_diagonal(self, tmp_path):
        m = top_k_rank_correlations(self.grid(), "mse", k=4)
        assert m.get("a", "b") == pytest.approx(1.0)
        assert m.get("a", "a") == pytest.approx(1.0)
        write_corr_csv(m, tmp_path / "r.csv")
        assert len((tmp_path / "r.csv").read_text().splitlines()) == 3

    def test_k_one_absent(self):
        assert top_k_rank_correlations(self.grid(), "mse", k=1).absent

    def test_k_too_large(self):
        with pytest.raises(DomainError):
            top_k(self.grid(), "mse", 17)

    def test_top_k_order(self):
        assert [r.config["a"] for r in top_k(self.grid(), "mse", 4)] == [1, 2, 3, 4]


def record(i, train, valid):
    return TrialRecord(i, {"a": i}, {"mse": train}, {"mse": valid}, None, 0.0, "ok")


class TestGapReport:
    def result(self, pairs):
        space = build_space([("a", "integer", list(range(len(pairs))))])
        return StudyResult(space, [record(i, t, v) for i, (t, v) in enumerate(pairs)])

    def test_flags(self, tmp_path):
        # best decile gaps ~0.01; record 18 overfits heavily, record 19 is worst with a tiny gap
        pairs = [(0.10, 0.11), (0.11, 0.12)] + [(0.3 + 0.01 * i, 0.4 + 0.01 * i) for i in range(16)]
        pairs += [(0.01, 0.9), (1.0, 1.0)]
        rep = gap_report(self.result(pairs), "mse")
        assert rep.best.index == 0
        assert rep.best.row.gap == pytest.approx(0.01)
        assert rep.overfit_threshold == pytest.approx(0.01, abs=1e-9)
        assert 18 in {e.index for e in rep.flagged_overfit}
        assert [e.index for e in rep.flagged_underfit] == [19]
        write_gap_csv(rep, tmp_path / "g.csv")
        assert len((tmp_path / "g.csv").read_text().splitlines()) == 21

    def test_zero_gaps_flag_nothing(self):
        rep = gap_report(self.result([(0.5, 0.5)] * 10), "mse")
        assert rep.flagged_overfit == [] and rep.flagged_underfit == []

    def test_relative_gap(self):
        rep = gap_report(self.result([(0.8, 1.0), (2.0, 1.5)]), "mse")
        assert rep.best.row.relative_gap_pct == pytest.approx(20.0)

    def test_bad_quantile(self):
        with pytest.raises(DomainError):
            gap_report(self.result([(1, 1)]), "mse", quantile=1.5)


class TestConcordance:
    def result(self, n, noisy):
        rng = np.random.default_rng(0)
        space = build_space([("a", "integer", list(range(n)))])

        def surface(p):
            auc = 0.5 + 0.4 * p["a"] / n
            ll = 0.7 - 0.3 * p["a"] / n + (rng.normal(0, 0.2) if noisy else 0.0)
            return TrialOutcome({"auc": auc, "logloss": ll}, {"auc": auc, "logloss": ll}, None)
        return run_study(space, SyntheticEvaluator(surface))

    def test_perfect_agreement(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            c = concordance(self.result(60, False), ks=(10, 50))
        assert c.rank_corr == pytest.approx(1.0)
        assert c.overlap == {10: 1.0, 50: 1.0}

    def test_capped_k_warns(self):
        with pytest.warns(UserWarning, match="capped"):
            c = concordance(self.result(20, True), ks=(50,))
        assert c.effective_k[50] == 20 and c.overlap[50] == 1.0
        assert c.rank_corr < 1.0

    def test_needs_both_metrics(self):
        res = run_study(build_space([("a", "integer", [1, 2])]), SyntheticEvaluator(lambda p: 1.0))
        with pytest.raises(DomainError):
            concordance(res)


def test_writers(tmp_path):
    levels, cells = random_design(np.random.default_rng(8))
    t = balanced_anova(study_from_cells(levels, cells), "mse")
    write_effects_csv(t, tmp_path / "e.csv")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert len(lines) == len(t) + 1
    append_summary(tmp_path / "s.jsonl", {"x": math.nan, "y": np.float64(1.5)})
    append_summary(tmp_path / "s.jsonl", {"x": 1})
    first = json.loads((tmp_path / "s.jsonl").read_text().splitlines()[0])
    assert first == {"x": None, "y": 1.5}

from fractions import Fraction

import numpy as np
import pytest

from corpus import Qrels, RunList
from fusion import (
    CORNERS,
    WeightTriple,
    enumerate_grid,
    format_grid_report,
    fuse,
    fuse_runs,
    fused_scores,
    fused_scores_exact,
    grid_search,
    normalize_per_query,
    single_model_objectives,
    write_heatmap_csv,
)

TUNED_WEIGHTS = WeightTriple(Fraction(3, 10), Fraction(1, 4), Fraction(9, 20))


def _run(qid, scores, tag="m"):
    return RunList.ranked(qid, scores, tag=tag)


class TestNormalize:
    def test_min_max(self):
        run = normalize_per_query(_run("q", {"a": 4.0, "b": 2.0, "c": 0.0}))
        assert run.entries == (("a", 1.0), ("b", 0.5), ("c", 0.0))

    def test_single_entry(self):
        assert normalize_per_query(_run("q", {"a": 7.0})).entries == (("a", 1.0),)

    def test_all_equal(self):
        assert [s for _, s in normalize_per_query(_run("q", {"a": 3.0, "b": 3.0})).entries] == [1.0, 1.0]

    def test_order_preserved(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            run = _run("q", {f"d{i}": float(s) for i, s in enumerate(rng.normal(size=10))})
            assert normalize_per_query(run).doc_ids == run.doc_ids


class TestWeightTriple:
    def test_sum_must_be_one(self):
        with pytest.raises(ValueError):
            WeightTriple(Fraction(1, 2), Fraction(1, 2), Fraction(1, 2))

    def test_range(self):
        with pytest.raises(ValueError):
            WeightTriple(Fraction(3, 2), Fraction(-1, 2), 0)

    def test_parse_is_exact(self):
        w = WeightTriple.parse("0.3,0.25,0.45")
        assert w == TUNED_WEIGHTS
        assert w.alpha + w.beta + w.theta == 1
        assert str(w) == "(0.3, 0.25, 0.45)"


class TestFuse:
    def test_weighted_sum(self):
        runs = [_run("q", {"d": 0.5, "x": 1.0, "y": 0.0}), _run("q", {"d": 1.0}), _run("q", {"z": 1.0, "d": 0.0})]
        scores = fused_scores(runs, TUNED_WEIGHTS)
        assert scores["d"] == pytest.approx(0.40, abs=1e-12)

    def test_doc_only_in_third_run(self):
        runs = [_run("q", {"a": 1.0}), _run("q", {"a": 1.0}), _run("q", {"z": 1.0})]
        assert fused_scores(runs, TUNED_WEIGHTS)["z"] == pytest.approx(0.45, abs=1e-12)

    def test_identity_corner_follows_first_run(self):
        run1 = normalize_per_query(_run("q", {"b": 3.0, "a": 2.0, "c": 1.0, "e": 0.0}))
        runs = [run1, normalize_per_query(_run("q", {"x": 5.0, "a": 1.0})), normalize_per_query(_run("q", {"y": 2.0, "c": 1.0}))]
        fused = fuse(runs, WeightTriple(1, 0, 0))
        assert [d for d in fused.doc_ids if d in run1.scores()] == run1.doc_ids
        assert set(fused.doc_ids) == {"a", "b", "c", "e", "x", "y"}

    def test_top_k(self):
        runs = [_run("q", {"a": 1.0, "b": 0.5}), _run("q", {"c": 1.0}), _run("q", {"d": 1.0})]
        assert len(fuse(runs, TUNED_WEIGHTS, k=2)) == 2

    def test_mixed_queries_rejected(self):
        with pytest.raises(ValueError):
            fuse([_run("q1", {"a": 1.0}), _run("q2", {"a": 1.0}), _run("q1", {"a": 1.0})], TUNED_WEIGHTS)

    def test_exact_linearity(self):
        rng = np.random.default_rng(3)
        runs = [normalize_per_query(_run("q", {f"d{j}": float(s) for j, s in enumerate(rng.random(6)) if rng.random() < 0.8 or j == 0})) for _ in range(3)]
        w1, w2 = TUNED_WEIGHTS, WeightTriple(1, 0, 0)
        lam = Fraction(1, 3)
        mixed = WeightTriple(*(lam * a + (1 - lam) * b for a, b in zip((w1.alpha, w1.beta, w1.theta), (w2.alpha, w2.beta, w2.theta))))
        s1, s2, sm = fused_scores_exact(runs, w1), fused_scores_exact(runs, w2), fused_scores_exact(runs, mixed)
        for doc in sm:
            assert sm[doc] == lam * s1[doc] + (1 - lam) * s2[doc]

    def test_fuse_runs_fills_missing_queries(self):
        a = [_run("q1", {"x": 2.0, "y": 1.0})]
        b = [_run("q1", {"y": 1.0}), _run("q2", {"z": 1.0})]
        c = []
        fused = fuse_runs(a, b, c, WeightTriple(0, 1, 0), tag="ens")
        assert [r.query_id for r in fused] == ["q1", "q2"]
        assert fused[1].doc_ids == ["z"]
        assert all(r.tag == "ens" for r in fused)


class TestGrid:
    def test_default_step_has_231_triples(self):
        grid = enumerate_grid()
        assert len(grid) == 231
        assert len(set(grid)) == 231
        assert all(w.alpha + w.beta + w.theta == 1 for w in grid)
        assert TUNED_WEIGHTS in grid

    def test_float_step(self):
        assert enumerate_grid(0.05) == enumerate_grid(Fraction(1, 20))

    def test_half_step(self):
        half = Fraction(1, 2)
        assert enumerate_grid(half) == [
            WeightTriple(0, 0, 1),
            WeightTriple(0, half, half),
            WeightTriple(0, 1, 0),
            WeightTriple(half, 0, half),
            WeightTriple(half, half, 0),
            WeightTriple(1, 0, 0),
        ]

    @pytest.mark.parametrize("n", [1, 3, 10])
    def test_cardinality(self, n):
        assert len(enumerate_grid(Fraction(1, n))) == (n + 1) * (n + 2) // 2

    def test_step_must_divide_one(self):
        with pytest.raises(ValueError):
            enumerate_grid(0.3)


def _random_run_sets(rng, queries=6, docs=12):
    ids = [f"d{i:02d}" for i in range(docs)]
    sets = []
    for m in range(3):
        sets.append([
            _run(f"q{q}", {d: float(rng.random()) for d in rng.choice(ids, size=int(rng.integers(2, docs)), replace=False).tolist()}, tag=f"m{m}")
            for q in range(queries)
        ])
    qrels = Qrels({(f"q{q}", d): 1 for q in range(queries) for d in rng.choice(ids, size=2, replace=False).tolist()})
    return sets, qrels


class TestGridSearch:
    def test_dominates_single_models(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            sets, qrels = _random_run_sets(rng)
            result = grid_search(sets, qrels, step=Fraction(1, 10))
            for corner in CORNERS:
                assert result.best_objective >= result.objective_of(corner)
            assert result.best_objective == max(v for _, v in result.entries)

    def test_third_model_alone_wins(self):
        sets = [[], [], []]
        judgments = {}
        for q in range(5):
            qid = f"q{q}"
            rel = f"r{q}"
            judgments[(qid, rel)] = 1
            sets[0].append(_run(qid, {"n1": 3.0, "n2": 2.0, "n3": 1.0, "n4": 0.5}))
            sets[1].append(_run(qid, {"n4": 3.0, "n3": 2.0, "n2": 1.0, "n1": 0.5}))
            sets[2].append(_run(qid, {rel: 1.0, "n9": 0.2}))
        result = grid_search(sets, Qrels(judgments))
        assert result.best == WeightTriple(0, 0, 1)
        assert result.best_objective == 1.0

    def test_ties_go_to_smallest_alpha_beta(self):
        sets = [[_run("q", {"a": 1.0})] for _ in range(3)]
        result = grid_search(sets, Qrels({("q", "a"): 1}), step=Fraction(1, 2))
        assert result.best == WeightTriple(0, 0, 1)

    def test_only_queries_with_relevant_docs_count(self):
        sets = [[_run("q1", {"a": 1.0}), _run("q2", {"b": 1.0})] for _ in range(3)]
        result = grid_search(sets, Qrels({("q1", "a"): 1, ("q2", "b"): 0}), step=Fraction(1, 2))
        assert result.query_count == 1
        assert result.best_objective == 1.0

    def test_unknown_objective(self):
        sets = [[_run("q", {"a": 1.0})] for _ in range(3)]
        with pytest.raises(ValueError, match="unknown metric"):
            grid_search(sets, Qrels({("q", "a"): 1}), objective="precision@3")

    def test_jobs_do_not_change_result(self):
        sets, qrels = _random_run_sets(np.random.default_rng(5))
        one = grid_search(sets, qrels, step=Fraction(1, 10), jobs=1)
        many = grid_search(sets, qrels, step=Fraction(1, 10), jobs=4)
        assert one.entries == many.entries
        assert one.best == many.best

    def test_single_model_objectives(self):
        sets, qrels = _random_run_sets(np.random.default_rng(6))
        result = grid_search(sets, qrels, step=Fraction(1, 4))
        corners = single_model_objectives(result)
        assert corners["model_3"] == result.objective_of(WeightTriple(0, 0, 1))


class TestGridOutput:
    def test_heatmap_and_report(self, tmp_path):
        sets, qrels = _random_run_sets(np.random.default_rng(8))
        result = grid_search(sets, qrels)
        write_heatmap_csv(result, tmp_path / "grid.csv")
        rows = (tmp_path / "grid.csv").read_text(encoding="utf-8").splitlines()
        assert rows[0] == "alpha,beta,theta,objective"
        assert len(rows) == 232
        assert rows[1].startswith("0,0,1,")

        report = format_grid_report(result).splitlines()
        assert report[0] == "objective: recall@3"
        assert report[1] == "evaluated combinations: 231"
        assert report[3].startswith("best: alpha=")
        assert len([line for line in report if line[:4].strip().isdigit()]) == 10

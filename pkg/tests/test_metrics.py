"""Metrics against the hand-worked fixture and an independent evaluator."""

import math

import numpy as np
import pytest

from corpus import Qrels, RunList
from metrics import (
    evaluate,
    format_report,
    map_at_k,
    metric_names,
    mrr_at_k,
    ndcg_at_k,
    parse_metric_name,
    recall_at_k,
    write_report_csv,
)

Q3_NDCG = (1 / math.log2(5)) / (1 + 1 / math.log2(3))

EXPECTED = {
    "q1": {"recall@3": 1.0, "recall@10": 1.0, "mrr@10": 1.0, "map@10": (1 + 2 / 3) / 2, "ndcg@10": 1.5 / (1 + 1 / math.log2(3))},
    "q2": {"recall@3": 1.0, "recall@10": 1.0, "mrr@10": 1 / 3, "map@10": 1 / 3, "ndcg@10": 0.5},
    "q3": {"recall@3": 0.0, "recall@10": 0.5, "mrr@10": 0.25, "map@10": 0.125, "ndcg@10": Q3_NDCG},
}


def _reference(ranking, relevant, k):
    """Vectorised restatement of the four definitions."""
    top = ranking[:k]
    hits = np.array([d in relevant for d in top], dtype=float)
    ranks = np.arange(1, len(top) + 1)
    recall = hits.sum() / len(relevant)
    mrr = float(1 / ranks[hits.argmax()]) if hits.any() else 0.0
    precision = np.cumsum(hits) / ranks
    ap = float((precision * hits).sum() / min(len(relevant), k))
    gains = hits / np.log2(ranks + 1)
    ideal = (1 / np.log2(np.arange(2, min(len(relevant), k) + 2))).sum()
    return recall, mrr, ap, float(gains.sum() / ideal)


class TestFixture:
    def test_ndcg_hand_value(self):
        assert ndcg_at_k(["a", "x", "b"], {"a": 1, "b": 1}, 10) == pytest.approx(0.919721, abs=1e-6)

    def test_per_query_values(self, metrics_fixture):
        runs, qrels = metrics_fixture
        report = evaluate(runs, qrels, ks=(3, 10))
        assert report.query_count == 3
        for qid, expected in EXPECTED.items():
            for name, value in expected.items():
                assert report.per_query[qid][name] == pytest.approx(value, abs=1e-9), (qid, name)

    def test_means(self, metrics_fixture):
        runs, qrels = metrics_fixture
        report = evaluate(runs, qrels, ks=(3, 10))
        for name in report.names:
            mean = sum(EXPECTED[q][name] for q in EXPECTED) / 3
            assert report.means[name] == pytest.approx(mean, abs=1e-9)

    def test_graded_judgments_are_binarised(self, metrics_fixture):
        runs, qrels = metrics_fixture
        assert qrels.grade("q1", "d2") == 2
        assert evaluate(runs, qrels, ks=(3,)).per_query["q1"]["ndcg@10"] == pytest.approx(EXPECTED["q1"]["ndcg@10"], abs=1e-9)


class TestDefinitions:
    def test_perfect_ranking(self):
        report = evaluate([RunList.ranked("q", {"a": 2.0, "b": 1.0})], Qrels({("q", "a"): 1, ("q", "b"): 1}), ks=(3,))
        assert all(v == pytest.approx(1.0) for v in report.means.values())

    def test_mean_of_two_queries(self):
        runs = [RunList.ranked("q1", {"a": 1.0}), RunList.ranked("q2", {"x": 1.0})]
        qrels = Qrels({("q1", "a"): 1, ("q2", "b"): 1})
        assert evaluate(runs, qrels, ks=(3,)).means["recall@3"] == 0.5

    def test_map_denominator_is_capped_by_k(self):
        assert map_at_k(["a"], {"a", "b", "c"}, 1) == 1.0

    def test_hit_rate(self):
        assert recall_at_k(["a", "x"], {"a", "b"}, 2) == 0.5
        assert recall_at_k(["a", "x"], {"a", "b"}, 2, hit_rate=True) == 1.0

    def test_mrr_cut_off(self):
        assert mrr_at_k(["x", "y", "a"], {"a"}, 2) == 0.0

    def test_empty_relevant_is_rejected(self):
        with pytest.raises(ValueError):
            recall_at_k(["a"], set(), 3)

    def test_metric_names(self):
        assert parse_metric_name("My_Recall@3") == ("recall", 3)
        assert parse_metric_name("ndcg@10") == ("ndcg", 10)
        with pytest.raises(ValueError):
            parse_metric_name("precision@3")
        with pytest.raises(ValueError):
            parse_metric_name("recall@0")
        assert metric_names((10, 3, 3)) == ["recall@3", "recall@10", "mrr@10", "map@10", "ndcg@10"]


class TestExclusion:
    def test_no_relevant_and_unjudged_are_counted(self, metrics_fixture):
        runs, qrels = metrics_fixture
        extra = runs + [RunList.ranked("q4", {"d1": 1.0}), RunList.ranked("q9", {"d1": 1.0})]
        judged = Qrels({**qrels.judgments, ("q4", "d1"): 0})
        report = evaluate(extra, judged, ks=(3, 10))
        assert report.query_count == 3
        assert report.excluded_no_relevant == 1
        assert report.excluded_unjudged == 1
        assert report.means["mrr@10"] == pytest.approx(evaluate(runs, qrels, ks=(3, 10)).means["mrr@10"])

    def test_nothing_judged(self):
        report = evaluate([RunList.ranked("q", {"a": 1.0})], Qrels(), ks=(3,))
        assert report.query_count == 0
        assert report.means["recall@3"] == 0.0


class TestRandomized:
    def test_agrees_with_reference_evaluator(self):
        rng = np.random.default_rng(0)
        docs = [f"d{i}" for i in range(30)]
        for _ in range(100):
            ranking = list(rng.permutation(docs)[: rng.integers(1, 30)])
            relevant = set(rng.choice(docs, size=int(rng.integers(1, 8)), replace=False).tolist())
            k = int(rng.integers(1, 25))
            recall, mrr, ap, ndcg = _reference(ranking, relevant, k)
            assert recall_at_k(ranking, relevant, k) == pytest.approx(recall, abs=1e-12)
            assert mrr_at_k(ranking, relevant, k) == pytest.approx(mrr, abs=1e-12)
            assert map_at_k(ranking, relevant, k) == pytest.approx(ap, abs=1e-12)
            assert ndcg_at_k(ranking, {d: 1 for d in relevant}, k) == pytest.approx(ndcg, abs=1e-12)

    def test_bounds_monotonicity_and_tail_permutation(self):
        rng = np.random.default_rng(1)
        docs = [f"d{i}" for i in range(20)]
        for _ in range(50):
            ranking = list(rng.permutation(docs))
            relevant = set(rng.choice(docs, size=int(rng.integers(1, 6)), replace=False).tolist())
            recalls = [recall_at_k(ranking, relevant, k) for k in range(1, 21)]
            assert all(b >= a for a, b in zip(recalls, recalls[1:]))
            assert recalls[-1] == 1.0
            k = int(rng.integers(1, 20))
            shuffled = ranking[:k] + list(rng.permutation(ranking[k:]))
            grades = {d: 1 for d in relevant}
            for fn, arg in ((recall_at_k, relevant), (mrr_at_k, relevant), (map_at_k, relevant), (ndcg_at_k, grades)):
                value = fn(ranking, arg, k)
                assert 0.0 <= value <= 1.0
                assert fn(shuffled, arg, k) == value

    @pytest.mark.parametrize("k", [1, 3, 10, 25])
    def test_agrees_with_ir_measures(self, k):
        ir_measures = pytest.importorskip("ir_measures")
        rng = np.random.default_rng(50 + k)
        docs = [f"d{i:02d}" for i in range(40)]
        rankings, relevant, judged, scored = {}, {}, [], []
        for qi in range(30):
            qid = f"q{qi}"
            rankings[qid] = [str(d) for d in rng.permutation(docs)[: rng.integers(1, 35)]]
            relevant[qid] = {str(d) for d in rng.choice(docs, size=int(rng.integers(1, 8)), replace=False)}
            judged += [ir_measures.Qrel(qid, d, 1) for d in sorted(relevant[qid])]
            scored += [ir_measures.ScoredDoc(qid, d, float(len(rankings[qid]) - i)) for i, d in enumerate(rankings[qid])]
        ours = {
            ir_measures.R @ k: lambda q: recall_at_k(rankings[q], relevant[q], k),
            ir_measures.RR @ k: lambda q: mrr_at_k(rankings[q], relevant[q], k),
            ir_measures.nDCG @ k: lambda q: ndcg_at_k(rankings[q], dict.fromkeys(relevant[q], 1), k),
        }
        seen = 0
        for row in ir_measures.iter_calc(list(ours), judged, scored):
            assert ours[row.measure](row.query_id) == pytest.approx(row.value, abs=1e-6), (row.query_id, str(row.measure))
            seen += 1
        assert seen >= len(rankings)


class TestReportOutput:
    def test_table(self, metrics_fixture):
        runs, qrels = metrics_fixture
        text = format_report(evaluate(runs, qrels, ks=(3,)), title="sys")
        lines = text.splitlines()
        assert lines[0] == "sys"
        assert any(line.startswith("recall@3") and line.endswith("0.666667") for line in lines)
        assert lines[-1] == "queries: 3 (excluded: 0 without relevant, 0 unjudged)"

    def test_csv(self, tmp_path, metrics_fixture):
        runs, qrels = metrics_fixture
        write_report_csv(evaluate(runs, qrels, ks=(3,)), tmp_path / "eval.csv")
        rows = (tmp_path / "eval.csv").read_text(encoding="utf-8").splitlines()
        assert rows[0] == "query_id,metric,value"
        assert rows[1] == "all,recall@3,0.666667"
        assert "q2,mrr@10,0.333333" in rows
        assert len(rows) == 1 + 4 * 4

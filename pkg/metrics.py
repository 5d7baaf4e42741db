"""
Rank-cutoff IR metrics over run lists and qrels.

Relevance is binary (grade > 0). Queries whose qrels hold no relevant document
are excluded from every mean and counted separately, as are run queries the
qrels never judged.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import AbstractSet, Dict, Iterable, List, Mapping, Sequence, Tuple, Union

from loguru import logger

from corpus import Qrels, RunList

DEFAULT_KS: Tuple[int, ...] = (3, 5, 10, 20, 50, 100, 200)
FIXED_METRICS: Tuple[str, ...] = ("mrr@10", "map@10", "ndcg@10")
METRIC_FAMILIES = ("recall", "mrr", "map", "ndcg")
_NAME_RE = re.compile(r"^(my_recall|recall|mrr|map|ndcg)@([1-9][0-9]*)$")

Ranking = Union[RunList, Sequence[str]]


def _ranked_ids(run: Ranking, k: int) -> List[str]:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    ids = run.doc_ids if isinstance(run, RunList) else list(run)
    return ids[:k]


def _require_relevant(relevant: AbstractSet[str]) -> None:
    if not relevant:
        raise ValueError("metric undefined for a query without relevant documents")


def recall_at_k(run: Ranking, relevant: AbstractSet[str], k: int, hit_rate: bool = False) -> float:
    _require_relevant(relevant)
    found = sum(1 for d in _ranked_ids(run, k) if d in relevant)
    if hit_rate:
        return 1.0 if found else 0.0
    return found / len(relevant)


def mrr_at_k(run: Ranking, relevant: AbstractSet[str], k: int) -> float:
    _require_relevant(relevant)
    for rank, doc_id in enumerate(_ranked_ids(run, k), start=1):
        if doc_id in relevant:
            return 1.0 / rank
    return 0.0


def map_at_k(run: Ranking, relevant: AbstractSet[str], k: int) -> float:
    """Cut-off average precision normalised by min(|relevant|, k)."""
    _require_relevant(relevant)
    hits = 0
    total = 0.0
    for rank, doc_id in enumerate(_ranked_ids(run, k), start=1):
        if doc_id in relevant:
            hits += 1
            total += hits / rank
    return total / min(len(relevant), k)


def ndcg_at_k(run: Ranking, grades: Mapping[str, int], k: int) -> float:
    """Binary-gain nDCG with log2(i + 1) discount; 0 when the ideal DCG is 0."""
    dcg = sum(1.0 / math.log2(i + 1) for i, d in enumerate(_ranked_ids(run, k), start=1) if grades.get(d, 0) > 0)
    n_relevant = sum(1 for g in grades.values() if g > 0)
    idcg = sum(1.0 / math.log2(i + 1) for i in range(1, min(n_relevant, k) + 1))
    return dcg / idcg if idcg > 0 else 0.0


def parse_metric_name(name: str) -> Tuple[str, int]:
    """'recall@3' -> ('recall', 3); 'my_recall@3' is an alias of recall."""
    match = _NAME_RE.match(name.strip().lower())
    if not match:
        raise ValueError(f"unknown metric {name!r}")
    family, k = match.group(1), int(match.group(2))
    return ("recall" if family == "my_recall" else family), k


def compute_metric(name: str, run: RunList, qrels: Qrels, hit_rate: bool = False) -> float:
    family, k = parse_metric_name(name)
    if family == "ndcg":
        return ndcg_at_k(run, qrels.grades(run.query_id), k)
    relevant = qrels.relevant(run.query_id)
    if family == "recall":
        return recall_at_k(run, relevant, k, hit_rate)
    if family == "mrr":
        return mrr_at_k(run, relevant, k)
    return map_at_k(run, relevant, k)


def metric_names(ks: Iterable[int]) -> List[str]:
    return [f"recall@{k}" for k in sorted(set(ks))] + list(FIXED_METRICS)


@dataclass
class MetricReport:
    means: Dict[str, float]
    per_query: Dict[str, Dict[str, float]]
    query_count: int
    excluded_no_relevant: int = 0
    excluded_unjudged: int = 0
    names: List[str] = field(default_factory=list)


def evaluate(runs: Sequence[RunList], qrels: Qrels, ks: Iterable[int] = DEFAULT_KS, hit_rate: bool = False) -> MetricReport:
    names = metric_names(ks)
    per_query: Dict[str, Dict[str, float]] = {}
    unjudged = no_relevant = 0
    for run in runs:
        if run.query_id not in qrels:
            unjudged += 1
            continue
        if not qrels.relevant(run.query_id):
            no_relevant += 1
            continue
        per_query[run.query_id] = {name: compute_metric(name, run, qrels, hit_rate) for name in names}
    if unjudged or no_relevant:
        logger.warning("Excluded {} unjudged queries and {} queries without relevant documents", unjudged, no_relevant)

    count = len(per_query)
    means = {name: (sum(m[name] for m in per_query.values()) / count if count else 0.0) for name in names}
    return MetricReport(means, per_query, count, no_relevant, unjudged, names)


def format_report(report: MetricReport, title: str = "") -> str:
    width = max([len(n) for n in report.names] + [6])
    lines = [title] if title else []
    lines.append(f"{'metric':<{width}}  value")
    lines.append(f"{'-' * width}  --------")
    for name in report.names:
        lines.append(f"{name:<{width}}  {report.means[name]:.6f}")
    lines.append(
        f"queries: {report.query_count} "
        f"(excluded: {report.excluded_no_relevant} without relevant, {report.excluded_unjudged} unjudged)"
    )
    return "\n".join(lines)


def write_report_csv(report: MetricReport, csv_path: Path) -> None:
    """Rows of query_id,metric,value; the means use query_id 'all'."""
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["query_id", "metric", "value"])
        for name in report.names:
            w.writerow(["all", name, f"{report.means[name]:.6f}"])
        for qid, values in report.per_query.items():
            for name in report.names:
                w.writerow([qid, name, f"{values[name]:.6f}"])

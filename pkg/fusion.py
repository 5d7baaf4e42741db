"""
Weighted score fusion of three systems and the weight grid search.

    Score(doc) = alpha * s1 + beta * s2 + theta * s3

where s_i is the per-query min-max normalised score of the doc in run i
(0 when run i did not return it). Weights are exact Fractions so every grid
triple sums to exactly 1; they become floats only when scoring.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

from loguru import logger
from tqdm import tqdm

from corpus import Qrels, RunList
from metrics import compute_metric, parse_metric_name

Number = Union[Fraction, int, float, str]
SUM_TOLERANCE = 1e-9


def to_fraction(value: Number) -> Fraction:
    """Floats go through their shortest repr so 0.05 becomes 1/20, not its binary expansion."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(repr(value))
    return Fraction(value)


def _fmt(value: Fraction) -> str:
    return f"{float(value):g}"


@dataclass(frozen=True, order=True)
class WeightTriple:
    alpha: Fraction
    beta: Fraction
    theta: Fraction

    def __post_init__(self):
        for name in ("alpha", "beta", "theta"):
            value = to_fraction(getattr(self, name))
            if not 0 <= value <= 1:
                raise ValueError(f"{name} must be in [0, 1], got {_fmt(value)}")
            object.__setattr__(self, name, value)
        total = self.alpha + self.beta + self.theta
        if abs(float(total) - 1.0) > SUM_TOLERANCE:
            raise ValueError(f"weights must sum to 1, got {_fmt(self.alpha)} + {_fmt(self.beta)} + {_fmt(self.theta)} = {float(total)}")

    @classmethod
    def parse(cls, text: str) -> "WeightTriple":
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 3:
            raise ValueError(f"expected alpha,beta,theta, got {text!r}")
        return cls(*(Fraction(p) for p in parts))

    def as_floats(self) -> Tuple[float, float, float]:
        return float(self.alpha), float(self.beta), float(self.theta)

    def __str__(self) -> str:
        return f"({_fmt(self.alpha)}, {_fmt(self.beta)}, {_fmt(self.theta)})"


CORNERS = (WeightTriple(1, 0, 0), WeightTriple(0, 1, 0), WeightTriple(0, 0, 1))


def normalize_per_query(run: RunList) -> RunList:
    """Min-max to [0, 1]; a single entry or all-equal scores map to 1.0."""
    if not run.entries:
        return run
    scores = [s for _, s in run.entries]
    hi, lo = max(scores), min(scores)
    if len(scores) == 1 or hi == lo:
        return RunList(run.query_id, tuple((d, 1.0) for d, _ in run.entries), run.tag)
    span = hi - lo
    return RunList(run.query_id, tuple((d, (s - lo) / span) for d, s in run.entries), run.tag)


def _check_same_query(runs: Sequence[RunList]) -> str:
    if len(runs) != 3:
        raise ValueError(f"fusion takes exactly 3 runs, got {len(runs)}")
    qids = {r.query_id for r in runs}
    if len(qids) != 1:
        raise ValueError(f"runs belong to different queries: {sorted(qids)}")
    return runs[0].query_id


def fused_scores(runs: Sequence[RunList], w: WeightTriple) -> Dict[str, float]:
    _check_same_query(runs)
    a, b, t = w.as_floats()
    s1, s2, s3 = (r.scores() for r in runs)
    pool = dict.fromkeys(d for r in runs for d in r.doc_ids)
    return {d: a * s1.get(d, 0.0) + b * s2.get(d, 0.0) + t * s3.get(d, 0.0) for d in pool}


def fused_scores_exact(runs: Sequence[RunList], w: WeightTriple) -> Dict[str, Fraction]:
    """Same combination carried out in exact rational arithmetic."""
    _check_same_query(runs)
    s1, s2, s3 = ({d: Fraction(s) for d, s in r.entries} for r in runs)
    zero = Fraction(0)
    pool = dict.fromkeys(d for r in runs for d in r.doc_ids)
    return {d: w.alpha * s1.get(d, zero) + w.beta * s2.get(d, zero) + w.theta * s3.get(d, zero) for d in pool}


def fuse(runs: Sequence[RunList], w: WeightTriple, k: Optional[int] = None, tag: str = "fused") -> RunList:
    """Fuse three already-normalised runs of one query; top-k of the union pool."""
    query_id = _check_same_query(runs)
    return RunList.ranked(query_id, fused_scores(runs, w), tag=tag, k=k)


def _aligned(run_sets: Sequence[Sequence[RunList]]) -> List[Tuple[str, Tuple[RunList, RunList, RunList]]]:
    """Per query (first-seen order), the normalised run from each set; missing runs are empty."""
    by_model = [{r.query_id: normalize_per_query(r) for r in runs} for runs in run_sets]
    order = list(dict.fromkeys(r.query_id for runs in run_sets for r in runs))
    out = []
    for qid in order:
        triple = tuple(m.get(qid) or RunList(qid, ()) for m in by_model)
        out.append((qid, triple))
    return out


def fuse_runs(
    runs_a: Sequence[RunList],
    runs_b: Sequence[RunList],
    runs_c: Sequence[RunList],
    w: WeightTriple,
    k: Optional[int] = None,
    tag: str = "fused",
) -> List[RunList]:
    return [fuse(triple, w, k, tag) for _, triple in _aligned([runs_a, runs_b, runs_c])]


def enumerate_grid(step: Number = Fraction(1, 20)) -> List[WeightTriple]:
    """Every (alpha, beta, 1 - alpha - beta) on the step lattice, alpha then beta ascending."""
    step = to_fraction(step)
    if not 0 < step <= 1:
        raise ValueError(f"step must be in (0, 1], got {_fmt(step)}")
    n = 1 / step
    if n.denominator != 1:
        raise ValueError(f"step {_fmt(step)} does not divide 1 exactly")
    n = int(n)
    return [WeightTriple(i * step, j * step, 1 - (i + j) * step) for i in range(n + 1) for j in range(n + 1 - i)]


@dataclass
class GridResult:
    entries: List[Tuple[WeightTriple, float]]
    best: WeightTriple
    best_objective: float
    objective_name: str = "recall@3"
    query_count: int = 0

    def objective_of(self, w: WeightTriple) -> float:
        for triple, value in self.entries:
            if triple == w:
                return value
        raise KeyError(str(w))

    def ranked(self) -> List[Tuple[WeightTriple, float]]:
        return sorted(self.entries, key=lambda e: (-e[1], e[0].alpha, e[0].beta))


def _objective_mean(
    aligned: Sequence[Tuple[str, Tuple[RunList, RunList, RunList]]],
    qrels: Qrels,
    w: WeightTriple,
    objective: str,
    k: Optional[int],
    hit_rate: bool,
) -> float:
    values = [compute_metric(objective, fuse(triple, w, k), qrels, hit_rate) for _, triple in aligned]
    return sum(values) / len(values) if values else 0.0


def grid_search(
    runs_by_model: Sequence[Sequence[RunList]],
    qrels: Qrels,
    objective: str = "recall@3",
    step: Number = Fraction(1, 20),
    k: Optional[int] = None,
    hit_rate: bool = False,
    jobs: int = 1,
    progress: bool = False,
) -> GridResult:
    """
    Evaluate the objective for every grid triple over the queries with at
    least one relevant document; ties go to the smallest (alpha, beta).
    """
    if len(runs_by_model) != 3:
        raise ValueError(f"grid search takes exactly 3 run sets, got {len(runs_by_model)}")
    parse_metric_name(objective)
    grid = enumerate_grid(step)
    aligned = [(qid, triple) for qid, triple in _aligned(runs_by_model) if qrels.relevant(qid)]
    if not aligned:
        logger.warning("Grid search: no run query has a relevant document in qrels; every objective is 0")

    def _score(w: WeightTriple) -> float:
        return _objective_mean(aligned, qrels, w, objective, k, hit_rate)

    if jobs <= 1:
        values = [_score(w) for w in tqdm(grid, desc="grid search", disable=not progress)]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as executor:
            values = list(tqdm(executor.map(_score, grid), total=len(grid), desc="grid search", disable=not progress))

    best_index = 0
    for i, value in enumerate(values):
        if value > values[best_index]:
            best_index = i
    entries = list(zip(grid, values))
    logger.info("Grid search over {} triples: best {} {}={:.6f}", len(grid), grid[best_index], objective, values[best_index])
    return GridResult(entries, grid[best_index], values[best_index], objective, len(aligned))


def write_heatmap_csv(result: GridResult, csv_path: Path) -> None:
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["alpha", "beta", "theta", "objective"])
        for triple, value in result.entries:
            w.writerow([_fmt(triple.alpha), _fmt(triple.beta), _fmt(triple.theta), f"{value:.6f}"])


def format_grid_report(result: GridResult, top: int = 10) -> str:
    b = result.best
    lines = [
        f"objective: {result.objective_name}",
        f"evaluated combinations: {len(result.entries)}",
        f"tuning queries: {result.query_count}",
        f"best: alpha={_fmt(b.alpha)} beta={_fmt(b.beta)} theta={_fmt(b.theta)} {result.objective_name}={result.best_objective:.6f}",
        "",
        f"top {min(top, len(result.entries))}:",
        f"{'rank':>4}  {'alpha':>5}  {'beta':>5}  {'theta':>5}  {result.objective_name}",
    ]
    for rank, (triple, value) in enumerate(result.ranked()[:top], start=1):
        lines.append(f"{rank:>4}  {_fmt(triple.alpha):>5}  {_fmt(triple.beta):>5}  {_fmt(triple.theta):>5}  {value:.6f}")
    return "\n".join(lines)


def single_model_objectives(result: GridResult) -> Dict[str, float]:
    """Objective at each corner of the simplex, i.e. each model alone."""
    return {name: result.objective_of(w) for name, w in zip(("model_1", "model_2", "model_3"), CORNERS)}

"""
Corpus data model and TREC-style file I/O.

Formats:
  - corpus: JSONL ({"id": ..., "text": ...} per line) or TSV (id<TAB>text)
  - queries: TSV (qid<TAB>text)
  - qrels: TREC "qid 0 docid grade", whitespace separated
  - runs: TREC "qid Q0 docid rank score tag", scores with 6 decimals
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

from loguru import logger

from errors import DuplicateIdError, FormatError

SCORE_DECIMALS = 6
CORPUS_FORMATS = ("jsonl", "tsv")


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str


@dataclass(frozen=True)
class Query:
    query_id: str
    text: str


def ranking_key(entry: Tuple[str, float]) -> Tuple[float, str]:
    """Score descending, then doc_id ascending."""
    doc_id, score = entry
    return (-score, doc_id)


@dataclass(frozen=True)
class RunList:
    """Ranked (doc_id, score) entries for one query, produced by system `tag`."""

    query_id: str
    entries: Tuple[Tuple[str, float], ...]
    tag: str = "run"

    def __post_init__(self):
        entries = tuple((str(d), float(s)) for d, s in self.entries)
        object.__setattr__(self, "entries", entries)
        seen = set()
        for i, (doc_id, score) in enumerate(entries):
            if doc_id in seen:
                raise ValueError(f"RunList {self.query_id!r}: duplicate doc_id {doc_id!r}")
            seen.add(doc_id)
            if i and score > entries[i - 1][1]:
                raise ValueError(f"RunList {self.query_id!r}: scores not descending at rank {i + 1}")
        if not self.tag or any(c.isspace() for c in self.tag):
            raise ValueError(f"RunList tag must be a non-empty token, got {self.tag!r}")

    @classmethod
    def ranked(
        cls,
        query_id: str,
        scores: Mapping[str, float] | Iterable[Tuple[str, float]],
        tag: str = "run",
        k: Optional[int] = None,
    ) -> "RunList":
        """Build a RunList from unordered scores, applying the tie-break and top-k cut."""
        items = scores.items() if isinstance(scores, Mapping) else scores
        ordered = sorted(((str(d), float(s)) for d, s in items), key=ranking_key)
        if k is not None:
            ordered = ordered[:k]
        return cls(query_id, tuple(ordered), tag)

    @property
    def doc_ids(self) -> List[str]:
        return [d for d, _ in self.entries]

    def scores(self) -> Dict[str, float]:
        return dict(self.entries)

    def top(self, k: int) -> List[str]:
        return [d for d, _ in self.entries[:k]]

    def __len__(self) -> int:
        return len(self.entries)


class Qrels:
    """Graded judgments keyed by (query_id, doc_id). Absent keys read as grade 0."""

    def __init__(self, judgments: Optional[Mapping[Tuple[str, str], int]] = None):
        by_query: Dict[str, Dict[str, int]] = {}
        for (qid, did), grade in (judgments or {}).items():
            if not qid or not did:
                raise ValueError("qrels ids must be non-empty strings")
            if int(grade) < 0:
                raise ValueError(f"negative grade for ({qid}, {did})")
            by_query.setdefault(qid, {})[did] = int(grade)
        self._by_query = MappingProxyType({q: MappingProxyType(d) for q, d in by_query.items()})

    def grade(self, query_id: str, doc_id: str) -> int:
        return self._by_query.get(query_id, {}).get(doc_id, 0)

    def is_relevant(self, query_id: str, doc_id: str) -> bool:
        return self.grade(query_id, doc_id) > 0

    def grades(self, query_id: str) -> Dict[str, int]:
        return dict(self._by_query.get(query_id, {}))

    def relevant(self, query_id: str) -> frozenset[str]:
        return frozenset(d for d, g in self._by_query.get(query_id, {}).items() if g > 0)

    def query_ids(self) -> List[str]:
        return list(self._by_query.keys())

    @property
    def judgments(self) -> Dict[Tuple[str, str], int]:
        return {(q, d): g for q, docs in self._by_query.items() for d, g in docs.items()}

    def __contains__(self, query_id: object) -> bool:
        return query_id in self._by_query

    def __len__(self) -> int:
        return sum(len(d) for d in self._by_query.values())

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Qrels) and self.judgments == other.judgments

    def __repr__(self) -> str:
        return f"Qrels({self.judgments!r})"


def _iter_nonblank_lines(path: Path) -> Iterator[Tuple[int, str]]:
    """Yield (line_no, line without newline) skipping whitespace-only lines."""
    with open(path, "rb") as f:
        for i, raw in enumerate(f, start=1):
            try:
                line = raw.decode("utf-8").rstrip("\r\n")
            except UnicodeDecodeError as e:
                raise FormatError(path, i, f"invalid UTF-8 at byte {e.start}") from e
            if not line.strip():
                continue
            yield i, line


def infer_corpus_format(path: Path) -> str:
    return "jsonl" if path.suffix.lower() in {".jsonl", ".json"} else "tsv"


def _parse_tsv_record(path: Path, line_no: int, line: str, kind: str) -> Tuple[str, str]:
    if "\t" not in line:
        raise FormatError(path, line_no, f"expected '{kind}_id<TAB>text', got {line[:60]!r}")
    item_id, text = line.split("\t", 1)
    item_id = item_id.strip()
    if not item_id:
        raise FormatError(path, line_no, f"empty {kind} id")
    return item_id, text


def _parse_jsonl_record(path: Path, line_no: int, line: str) -> Tuple[str, str]:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise FormatError(path, line_no, f"invalid JSON ({e.msg})") from e
    if not isinstance(obj, dict):
        raise FormatError(path, line_no, "expected a JSON object")
    doc_id, text = obj.get("id"), obj.get("text")
    if not isinstance(doc_id, str) or not doc_id:
        raise FormatError(path, line_no, "field 'id' must be a non-empty string")
    if not isinstance(text, str):
        raise FormatError(path, line_no, "field 'text' must be a string")
    return doc_id, text


def load_corpus(path: str | Path, format: Optional[str] = None) -> List[Document]:
    """Load documents in file order; `format` is inferred from the suffix when omitted."""
    path = Path(path)
    fmt = format or infer_corpus_format(path)
    if fmt not in CORPUS_FORMATS:
        raise ValueError(f"unknown corpus format {fmt!r} (expected one of {CORPUS_FORMATS})")

    docs: List[Document] = []
    seen: Dict[str, int] = {}
    for line_no, line in _iter_nonblank_lines(path):
        if fmt == "jsonl":
            doc_id, text = _parse_jsonl_record(path, line_no, line)
        else:
            doc_id, text = _parse_tsv_record(path, line_no, line, "doc")
        if doc_id in seen:
            raise DuplicateIdError(path, line_no, "doc", doc_id)
        seen[doc_id] = line_no
        docs.append(Document(doc_id, text))
    logger.debug("Loaded {} documents from {}", len(docs), path)
    return docs


def load_queries(path: str | Path) -> List[Query]:
    path = Path(path)
    queries: List[Query] = []
    seen = set()
    for line_no, line in _iter_nonblank_lines(path):
        qid, text = _parse_tsv_record(path, line_no, line, "query")
        if qid in seen:
            raise DuplicateIdError(path, line_no, "query", qid)
        seen.add(qid)
        queries.append(Query(qid, text))
    logger.debug("Loaded {} queries from {}", len(queries), path)
    return queries


def load_qrels(path: str | Path) -> Qrels:
    """Parse TREC qrels; a later line for the same (qid, docid) overwrites an earlier one."""
    path = Path(path)
    judgments: Dict[Tuple[str, str], int] = {}
    for line_no, line in _iter_nonblank_lines(path):
        parts = line.split()
        if len(parts) != 4:
            raise FormatError(path, line_no, f"expected 'qid 0 docid grade', got {len(parts)} fields")
        qid, _iteration, doc_id, grade_str = parts
        try:
            grade = int(grade_str)
        except ValueError as e:
            raise FormatError(path, line_no, f"grade {grade_str!r} is not an integer") from e
        if grade < 0:
            raise FormatError(path, line_no, f"negative grade {grade}")
        judgments[(qid, doc_id)] = grade
    return Qrels(judgments)


def write_qrels(qrels: Qrels, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for (qid, doc_id), grade in qrels.judgments.items():
            f.write(f"{qid} 0 {doc_id} {grade}\n")


def write_corpus_tsv(items: Sequence[Document] | Sequence[Query], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for item in items:
            item_id = item.doc_id if isinstance(item, Document) else item.query_id
            f.write(f"{item_id}\t{item.text}\n")


def format_run_line(query_id: str, doc_id: str, rank: int, score: float, tag: str) -> str:
    return f"{query_id} Q0 {doc_id} {rank} {score:.{SCORE_DECIMALS}f} {tag}"


def write_run(runs: Sequence[RunList], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for run in runs:
            for rank, (doc_id, score) in enumerate(run.entries, start=1):
                f.write(format_run_line(run.query_id, doc_id, rank, score, run.tag) + "\n")


def read_run(path: str | Path) -> List[RunList]:
    """Read a TREC run file; ranks must be 1, 2, ... in file order within each query."""
    path = Path(path)
    grouped: Dict[str, List[Tuple[str, float]]] = {}
    tags: Dict[str, str] = {}
    for line_no, line in _iter_nonblank_lines(path):
        parts = line.split()
        if len(parts) != 6:
            raise FormatError(path, line_no, f"expected 'qid Q0 docid rank score tag', got {len(parts)} fields")
        qid, _q0, doc_id, rank_str, score_str, tag = parts
        try:
            rank = int(rank_str)
            score = float(score_str)
        except ValueError as e:
            raise FormatError(path, line_no, f"bad rank/score {rank_str!r}/{score_str!r}") from e
        entries = grouped.setdefault(qid, [])
        if rank != len(entries) + 1:
            raise FormatError(path, line_no, f"rank {rank} for query {qid!r} where {len(entries) + 1} was expected")
        entries.append((doc_id, score))
        tags.setdefault(qid, tag)

    runs: List[RunList] = []
    for qid, entries in grouped.items():
        try:
            runs.append(RunList(qid, tuple(entries), tags[qid]))
        except ValueError as e:
            raise FormatError(path, None, str(e)) from e
    return runs

"""
Sparse lexical retrieval: TF-IDF (log-tf, cosine-normalised) and BM25 / BM25+
over an inverted index of document term statistics.

BM25+ per term:  IDF(t) * ( (k1+1)*tf / (k1*(1-b+b*dl/avgdl) + tf) + delta )
with IDF(t) = ln((N - df + 0.5) / (df + 0.5) + 1). Terms with df = 0 (or out of
vocabulary) contribute nothing, including the delta bonus.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

from loguru import logger
from tqdm import tqdm

from corpus import Document, Query, RunList
from errors import CheckpointError, FormatError, IndexStateError
from tokenizer import UNK_ID, TokenizerScheme, Vocabulary, encode_ids

INDEX_FORMAT_VERSION = 1

Posting = Tuple[int, int]  # (doc_index, term_frequency)


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.2
    b: float = 0.75
    delta: float = 1.0

    def __post_init__(self):
        if self.k1 < 0:
            raise ValueError(f"k1 must be >= 0, got {self.k1}")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError(f"b must be in [0, 1], got {self.b}")
        if self.delta < 0:
            raise ValueError(f"delta must be >= 0, got {self.delta}")


@dataclass(frozen=True)
class Scorer:
    """`tfidf`, `bm25plus` or `bm25` (bm25plus with delta forced to 0)."""

    kind: str = "bm25plus"
    params: Bm25Params = field(default_factory=Bm25Params)

    def __post_init__(self):
        if self.kind not in ("tfidf", "bm25plus", "bm25"):
            raise ValueError(f"unknown scorer {self.kind!r}")
        if self.kind == "bm25" and self.params.delta != 0:
            object.__setattr__(self, "params", Bm25Params(self.params.k1, self.params.b, 0.0))

    @classmethod
    def parse(cls, name: str, k1: float = 1.2, b: float = 0.75, delta: float = 1.0) -> "Scorer":
        return cls(name, Bm25Params(k1, b, delta))

    @property
    def tag(self) -> str:
        return self.kind


@dataclass(frozen=True)
class InvertedIndex:
    postings: Mapping[int, Tuple[Posting, ...]]
    doc_lengths: Tuple[int, ...]
    doc_ids: Tuple[str, ...]
    scheme: TokenizerScheme
    vocab: Optional[Vocabulary] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        postings = {int(t): tuple((int(d), int(tf)) for d, tf in plist) for t, plist in self.postings.items()}
        object.__setattr__(self, "postings", MappingProxyType(postings))
        object.__setattr__(self, "doc_lengths", tuple(int(x) for x in self.doc_lengths))
        object.__setattr__(self, "doc_ids", tuple(self.doc_ids))
        if len(self.doc_lengths) != len(self.doc_ids):
            raise ValueError("doc_lengths and doc_ids differ in length")

        forward: List[Dict[int, int]] = [{} for _ in self.doc_ids]
        for token_id, plist in postings.items():
            for doc_index, tf in plist:
                forward[doc_index][token_id] = tf
        object.__setattr__(self, "_forward", tuple(MappingProxyType(d) for d in forward))

        norms = []
        for terms in forward:
            sq = 0.0
            for token_id, tf in terms.items():
                w = _tfidf_weight(tf, len(postings[token_id]), len(self.doc_ids))
                sq += w * w
            norms.append(math.sqrt(sq))
        object.__setattr__(self, "_doc_norms", tuple(norms))

    @property
    def doc_count(self) -> int:
        return len(self.doc_ids)

    @property
    def avg_doc_length(self) -> float:
        return sum(self.doc_lengths) / len(self.doc_lengths) if self.doc_lengths else 0.0

    @property
    def vocab_fingerprint(self) -> Optional[str]:
        return self.vocab.fingerprint if self.vocab is not None else None

    def df(self, token_id: int) -> int:
        return len(self.postings.get(token_id, ()))

    def tf(self, token_id: int, doc_index: int) -> int:
        return self._forward[doc_index].get(token_id, 0)  # type: ignore[attr-defined]

    def doc_norm(self, doc_index: int) -> float:
        return self._doc_norms[doc_index]  # type: ignore[attr-defined]


def build_index(docs: Sequence[Document], scheme: TokenizerScheme, vocab: Vocabulary) -> InvertedIndex:
    """Index documents in the given order. UNK tokens are neither indexed nor counted in dl."""
    postings: Dict[int, List[Posting]] = {}
    lengths: List[int] = []
    for doc_index, doc in enumerate(docs):
        counts: Dict[int, int] = {}
        for token_id in encode_ids(doc.text, scheme, vocab):
            if token_id == UNK_ID:
                continue
            counts[token_id] = counts.get(token_id, 0) + 1
        lengths.append(sum(counts.values()))
        for token_id in sorted(counts):
            postings.setdefault(token_id, []).append((doc_index, counts[token_id]))
    index = InvertedIndex(
        postings={t: tuple(p) for t, p in sorted(postings.items())},
        doc_lengths=tuple(lengths),
        doc_ids=tuple(d.doc_id for d in docs),
        scheme=scheme,
        vocab=vocab,
    )
    logger.debug("Built index: N={} terms={} avgdl={:.3f}", index.doc_count, len(index.postings), index.avg_doc_length)
    return index


def _distinct(query_ids: Sequence[int]) -> List[int]:
    return list(dict.fromkeys(int(t) for t in query_ids))


def bm25_idf(index: InvertedIndex, token_id: int) -> float:
    n, df = index.doc_count, index.df(token_id)
    return math.log((n - df + 0.5) / (df + 0.5) + 1.0)


def bm25plus_score(index: InvertedIndex, query_ids: Sequence[int], doc_index: int, params: Bm25Params = Bm25Params()) -> float:
    if not 0 <= doc_index < index.doc_count:
        raise IndexError(f"doc_index {doc_index} out of range for N={index.doc_count}")
    avgdl = index.avg_doc_length
    dl = index.doc_lengths[doc_index]
    length_norm = 1.0 - params.b + params.b * dl / avgdl if avgdl > 0 else 1.0
    score = 0.0
    for token_id in _distinct(query_ids):
        if index.df(token_id) == 0:
            continue
        tf = index.tf(token_id, doc_index)
        saturation = ((params.k1 + 1.0) * tf) / (params.k1 * length_norm + tf) if tf > 0 else 0.0
        score += bm25_idf(index, token_id) * (saturation + params.delta)
    return score


def _tfidf_weight(tf: int, df: int, n: int) -> float:
    if tf <= 0 or df <= 0:
        return 0.0
    return (1.0 + math.log(tf)) * math.log(n / df)


def tfidf_score(index: InvertedIndex, query_ids: Sequence[int], doc_index: int) -> float:
    """Cosine between log-tf * idf vectors; 0 when either vector is all zero."""
    if not 0 <= doc_index < index.doc_count:
        raise IndexError(f"doc_index {doc_index} out of range for N={index.doc_count}")
    n = index.doc_count
    query_tf: Dict[int, int] = {}
    for token_id in query_ids:
        query_tf[int(token_id)] = query_tf.get(int(token_id), 0) + 1

    dot = 0.0
    q_sq = 0.0
    for token_id, qtf in query_tf.items():
        df = index.df(token_id)
        wq = _tfidf_weight(qtf, df, n)
        if wq == 0.0:
            continue
        q_sq += wq * wq
        wd = _tfidf_weight(index.tf(token_id, doc_index), df, n)
        dot += wq * wd
    d_norm = index.doc_norm(doc_index)
    if q_sq == 0.0 or d_norm == 0.0:
        return 0.0
    return dot / (math.sqrt(q_sq) * d_norm)


def _query_token_ids(index: InvertedIndex, query: Union[Query, Sequence[int]]) -> List[int]:
    if isinstance(query, Query):
        if index.vocab is None:
            raise IndexStateError("index has no vocabulary attached; pass token ids instead of a Query")
        return encode_ids(query.text, index.scheme, index.vocab)
    return [int(t) for t in query]


def score_documents(index: InvertedIndex, query_ids: Sequence[int], scorer: Scorer) -> List[float]:
    if scorer.kind == "tfidf":
        return [tfidf_score(index, query_ids, i) for i in range(index.doc_count)]
    return [bm25plus_score(index, query_ids, i, scorer.params) for i in range(index.doc_count)]


def sparse_retrieve(
    index: InvertedIndex,
    query: Union[Query, Sequence[int]],
    scorer: Scorer,
    k: int,
    query_id: Optional[str] = None,
) -> RunList:
    """Exhaustive top-k; equal scores fall back to ascending doc_id."""
    if index.doc_count == 0:
        raise IndexStateError("empty index")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    qid = query.query_id if isinstance(query, Query) else (query_id or "q")
    scores = score_documents(index, _query_token_ids(index, query), scorer)
    return RunList.ranked(qid, zip(index.doc_ids, scores), tag=scorer.tag, k=k)


def sparse_retrieve_many(
    index: InvertedIndex,
    queries: Sequence[Query],
    scorer: Scorer,
    k: int,
    jobs: int = 1,
    progress: bool = False,
) -> List[RunList]:
    """Retrieve for every query; output order follows `queries` whatever `jobs` is."""
    if index.doc_count == 0:
        raise IndexStateError("empty index")

    def _one(q: Query) -> RunList:
        return sparse_retrieve(index, q, scorer, k)

    if jobs <= 1:
        return [_one(q) for q in tqdm(queries, desc=f"{scorer.kind} retrieval", disable=not progress)]
    with ThreadPoolExecutor(max_workers=jobs) as executor:
        return list(tqdm(executor.map(_one, queries), total=len(queries), desc=f"{scorer.kind} retrieval", disable=not progress))


def save_index(index: InvertedIndex, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": INDEX_FORMAT_VERSION,
        "scheme": str(index.scheme),
        "vocab_fingerprint": index.vocab_fingerprint,
        "doc_ids": list(index.doc_ids),
        "doc_lengths": list(index.doc_lengths),
        "postings": {str(t): [list(p) for p in plist] for t, plist in index.postings.items()},
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, ensure_ascii=False, sort_keys=True)
        f.write("\n")


def load_index(path: str | Path, vocab: Vocabulary) -> InvertedIndex:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
    except json.JSONDecodeError as e:
        raise FormatError(path, e.lineno, f"invalid index JSON ({e.msg})") from e
    version = payload.get("format_version")
    if version != INDEX_FORMAT_VERSION:
        raise CheckpointError(f"{path}: index format version {version} (expected {INDEX_FORMAT_VERSION})")
    if payload.get("vocab_fingerprint") != vocab.fingerprint:
        raise CheckpointError(f"{path}: index was built with a different vocabulary")
    scheme = TokenizerScheme.parse(payload["scheme"])
    if scheme != vocab.scheme:
        raise CheckpointError(f"{path}: index scheme {scheme} does not match vocabulary scheme {vocab.scheme}")
    return InvertedIndex(
        postings={int(t): tuple(tuple(p) for p in plist) for t, plist in payload["postings"].items()},
        doc_lengths=tuple(payload["doc_lengths"]),
        doc_ids=tuple(payload["doc_ids"]),
        scheme=scheme,
        vocab=vocab,
    )

"""
Seeded planted-topic corpus for demos and the directional pipeline tests.

Each topic owns a set of document words and a disjoint set of query words.
Documents draw from their topic's document words mixed with a shared noise
pool; queries draw mostly from their topic's query words, with a small chance
of a topic document word (`lexical_overlap`). Every document of a topic is
relevant to every query of that topic, so lexical matching sees little of
the relevance signal and a trained encoder has to learn the rest.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from corpus import Document, Qrels, Query


@dataclass(frozen=True)
class SyntheticCorpus:
    docs: List[Document]
    train_queries: List[Query]
    eval_queries: List[Query]
    qrels: Qrels
    doc_topic: Dict[str, int]


def _words(prefix: str, count: int) -> List[str]:
    return [f"{prefix}{i}" for i in range(count)]


def make_cluster_corpus(
    seed: int,
    topics: int = 10,
    docs_per_topic: int = 50,
    train_queries_per_topic: int = 5,
    eval_queries_per_topic: int = 2,
    doc_words_per_topic: int = 12,
    query_words_per_topic: int = 4,
    noise_words: int = 60,
    doc_length: int = 16,
    query_length: int = 4,
    noise_rate: float = 0.3,
    lexical_overlap: float = 0.2,
) -> SyntheticCorpus:
    if topics < 2:
        raise ValueError(f"need at least 2 topics, got {topics}")
    if not 0.0 <= noise_rate < 1.0 or not 0.0 <= lexical_overlap <= 1.0:
        raise ValueError("noise_rate must be in [0, 1) and lexical_overlap in [0, 1]")
    rng = np.random.default_rng(seed)
    noise = _words("n", noise_words)
    doc_vocab = [_words(f"t{t}d", doc_words_per_topic) for t in range(topics)]
    query_vocab = [_words(f"t{t}q", query_words_per_topic) for t in range(topics)]

    assignment = rng.permutation(np.repeat(np.arange(topics), docs_per_topic))
    docs: List[Document] = []
    doc_topic: Dict[str, int] = {}
    for i, topic in enumerate(assignment.tolist()):
        tokens = [
            noise[rng.integers(len(noise))] if noise and rng.random() < noise_rate else doc_vocab[topic][rng.integers(doc_words_per_topic)]
            for _ in range(doc_length)
        ]
        doc_id = f"d{i:04d}"
        docs.append(Document(doc_id, " ".join(tokens)))
        doc_topic[doc_id] = topic

    def _query_text(topic: int) -> str:
        tokens = [
            doc_vocab[topic][rng.integers(doc_words_per_topic)] if rng.random() < lexical_overlap else query_vocab[topic][rng.integers(query_words_per_topic)]
            for _ in range(query_length)
        ]
        return " ".join(tokens)

    judgments: Dict[Tuple[str, str], int] = {}

    def _queries(prefix: str, per_topic: int) -> List[Query]:
        out = []
        for topic in range(topics):
            for j in range(per_topic):
                q = Query(f"{prefix}{topic:02d}_{j}", _query_text(topic))
                judgments.update({(q.query_id, d): 1 for d, t in doc_topic.items() if t == topic})
                out.append(q)
        return out

    train = _queries("tq", train_queries_per_topic)
    evaluation = _queries("eq", eval_queries_per_topic)
    return SyntheticCorpus(docs, train, evaluation, Qrels(judgments), doc_topic)

#!/usr/bin/env python3
"""
Write the seeded planted-topic corpus as pipeline input files.

Outputs (under --out):
  corpus.tsv, train_queries.tsv, eval_queries.tsv, qrels.txt, synthetic.json (generation parameters)

Examples:
  python3 tools/make_synthetic_corpus.py --seed 7 --out data/synthetic
  python3 tools/make_synthetic_corpus.py --seed 7 --topics 4 --docs-per-topic 10 --out /tmp/tiny
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Dict

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from corpus import write_corpus_tsv, write_qrels  # noqa: E402
from synthetic import make_cluster_corpus  # noqa: E402


def _write_json(path: Path, data: Dict[str, Any]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, ensure_ascii=False)
        f.write("\n")


def main() -> int:
    ap = argparse.ArgumentParser(description="Generate a planted-topic retrieval corpus")
    ap.add_argument("--seed", type=int, required=True)
    ap.add_argument("--out", required=True, help="Output directory")
    ap.add_argument("--topics", type=int, default=10)
    ap.add_argument("--docs-per-topic", type=int, default=50)
    ap.add_argument("--train-queries-per-topic", type=int, default=5)
    ap.add_argument("--eval-queries-per-topic", type=int, default=2)
    ap.add_argument("--lexical-overlap", type=float, default=0.2, help="Chance a query token is a topic document word")
    args = ap.parse_args()

    params = {
        "seed": args.seed,
        "topics": args.topics,
        "docs_per_topic": args.docs_per_topic,
        "train_queries_per_topic": args.train_queries_per_topic,
        "eval_queries_per_topic": args.eval_queries_per_topic,
        "lexical_overlap": args.lexical_overlap,
    }
    data = make_cluster_corpus(**params)
    out = Path(args.out)
    write_corpus_tsv(data.docs, out / "corpus.tsv")
    write_corpus_tsv(data.train_queries, out / "train_queries.tsv")
    write_corpus_tsv(data.eval_queries, out / "eval_queries.tsv")
    write_qrels(data.qrels, out / "qrels.txt")
    _write_json(out / "synthetic.json", params)
    print(f"[synthetic] {len(data.docs)} docs, {len(data.train_queries)} train / {len(data.eval_queries)} eval queries -> {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

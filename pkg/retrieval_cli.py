#!/usr/bin/env python3
"""
Command-line surface for the retrieval toolkit.

Commands:
  ingest        validate corpus/queries/qrels and write the vocabulary
  index         build the sparse inverted index
  pretrain      MLM-pretrain an encoder (Phase 1)
  stage1        label BM25+ or encoder candidates into training pairs
  train         contrastive training on a pairs file
  mine          hard-negative mining with a trained encoder
  run-pipeline  a named variant end to end (bm25plus | lms | lms-mlm)
  retrieve      rank queries with tfidf / bm25 / bm25plus / dense
  fuse          weighted fusion of three run files
  gridsearch    exhaustive weight search over three run files
  eval          Recall@k, MRR@10, MAP@10, nDCG@10 for a run file

Examples:
  python retrieval_cli.py ingest --corpus data/corpus.tsv --queries data/train_queries.tsv --qrels data/qrels.txt
  python retrieval_cli.py run-pipeline --variant lms-mlm --rounds 2 --seed 7 --corpus data/corpus.tsv \\
      --queries data/train_queries.tsv --eval-queries data/eval_queries.tsv --qrels data/qrels.txt
  python retrieval_cli.py gridsearch --runs a.txt,b.txt,c.txt --qrels data/qrels.txt --step 0.05
  python retrieval_cli.py eval --run output/run.fused.txt --qrels data/qrels.txt --ks 3,10

Exit codes: 0 success, 2 usage error, 1 runtime failure. Failures also print
one line `error kind=<usage|runtime> type=<Name> message=<json string>` to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import yaml
from loguru import logger

from config import CONFIG_KEYS, RunConfig, format_config, load_config_file, resolve_config
from corpus import Document, Query, load_corpus, load_qrels, load_queries, read_run, write_run
from encoder import MlmStats, dense_retrieve_many, init_params, load_checkpoint, mlm_pretrain, save_checkpoint
from errors import ConfigError, RetrievalError
from fusion import WeightTriple, format_grid_report, fuse_runs, grid_search, write_heatmap_csv
from log_utils import configure_logging
from metrics import evaluate, format_report, write_report_csv
from sparse import Scorer, build_index, load_index, save_index, sparse_retrieve_many
from stages import (
    EncodedCollection,
    PipelineConfig,
    PipelineVariant,
    check_label_soundness,
    read_pairs,
    run_pipeline,
    stage1_label,
    stage2_train,
    stage3_mine,
    write_pairs,
)
from tokenizer import TokenizerScheme, Vocabulary, build_vocabulary, load_vocabulary, save_vocabulary

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


class UsageError(Exception):
    """Raised by the argument parser instead of exiting."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _error_line(kind: str, exc: BaseException) -> str:
    return f"error kind={kind} type={type(exc).__name__} message={json.dumps(str(exc), ensure_ascii=False)}"


# ---------------------------------------------------------------------------
# argument groups, one function per concern; dest names match RunConfig keys
# ---------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="Flat key=value config file (flags override it)")
    p.add_argument("--output-dir", dest="output_dir", help="Directory for every output artifact (default: output)")
    p.add_argument("--jobs", type=int, help="Per-query worker threads (1 = sequential baseline)")
    p.add_argument("--progress", action="store_true", default=None, help="Show progress bars")
    p.add_argument("--log-level", dest="log_level", help="Log level (default: RETRIEVAL_LOG_LEVEL or INFO)")


def _corpus_args(p: argparse.ArgumentParser, queries: bool = False, qrels: bool = False) -> None:
    p.add_argument("--corpus", help="Corpus file (.jsonl or TSV id<TAB>text)")
    p.add_argument("--corpus-format", dest="corpus_format", choices=["jsonl", "tsv"], help="Override the suffix-based format")
    if queries:
        p.add_argument("--queries", help="Query TSV (qid<TAB>text)")
    if qrels:
        p.add_argument("--qrels", help="TREC qrels file")


def _vocab_args(p: argparse.ArgumentParser, scheme: bool = False) -> None:
    p.add_argument("--vocab", help="Vocabulary file written by ingest")
    if scheme:
        p.add_argument("--scheme", help="whitespace_lower or char_ngram:<n>")
        p.add_argument("--min-count", dest="min_count", type=int)


def _train_args(p: argparse.ArgumentParser, mlm: bool = False, checkpoint: bool = True) -> None:
    p.add_argument("--seed", type=int, help="Random seed (mandatory for training commands)")
    p.add_argument("--dim", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    if checkpoint:
        p.add_argument("--checkpoint", help="Start from this encoder checkpoint instead of a fresh init")
    if mlm:
        p.add_argument("--mlm-epochs", dest="mlm_epochs", type=int)
        p.add_argument("--mlm-learning-rate", dest="mlm_learning_rate", type=float)
        p.add_argument("--mask-rate", dest="mask_rate", type=float)
    else:
        p.add_argument("--epochs", type=int)
        p.add_argument("--learning-rate", dest="learning_rate", type=float)
        p.add_argument("--margin", type=float)
        p.add_argument("--literal-cosine-distance", dest="literal_cosine_distance", action="store_true", default=None)


def _label_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--top-n", dest="top_n", type=int, help="Candidates per query considered for negatives")
    p.add_argument("--neg-per-query", dest="neg_per_query", type=int)


def _scorer_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scorer", choices=["tfidf", "bm25", "bm25plus", "dense"])
    p.add_argument("--index", help="Index file written by the index command")
    p.add_argument("--k1", type=float)
    p.add_argument("--b", type=float)
    p.add_argument("--delta", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="retrieval_cli.py",
        description="Desk-scale multi-stage retrieval: sparse baselines, dual-encoder pipelines, fusion, evaluation",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="Validate inputs and write vocab.txt")
    _common(p)
    _corpus_args(p, queries=True, qrels=True)
    _vocab_args(p, scheme=True)

    p = sub.add_parser("index", help="Build index.json")
    _common(p)
    _corpus_args(p)
    _vocab_args(p)

    p = sub.add_parser("pretrain", help="MLM pretraining -> checkpoint.mlm.bin")
    _common(p)
    _corpus_args(p)
    _vocab_args(p)
    _train_args(p, mlm=True)

    p = sub.add_parser("stage1", help="Label candidates -> pairs.stage1.tsv")
    _common(p)
    _corpus_args(p, queries=True, qrels=True)
    _vocab_args(p)
    _label_args(p)
    _scorer_args(p)
    p.add_argument("--checkpoint", help="Encoder used when --scorer dense")
    p.add_argument("--seed", type=int, help="Seed of the random encoder when --scorer dense has no checkpoint")
    p.add_argument("--dim", type=int)

    p = sub.add_parser("train", help="Contrastive training -> checkpoint.bin")
    _common(p)
    _corpus_args(p, queries=True)
    _vocab_args(p)
    _train_args(p)
    p.add_argument("--pairs", help="Pairs file written by stage1 or mine")

    p = sub.add_parser("mine", help="Hard negatives -> pairs.stage3.tsv")
    _common(p)
    _corpus_args(p, queries=True, qrels=True)
    _vocab_args(p)
    _label_args(p)
    p.add_argument("--checkpoint", help="Trained encoder checkpoint")

    p = sub.add_parser("run-pipeline", help="Run a named variant end to end")
    _common(p)
    _corpus_args(p, queries=True, qrels=True)
    _vocab_args(p, scheme=True)
    _train_args(p, checkpoint=False)
    _label_args(p)
    p.add_argument("--eval-queries", dest="eval_queries", help="Queries ranked by the final encoder (default: --queries)")
    p.add_argument("--variant", choices=["bm25plus", "lms", "lms-mlm"])
    p.add_argument("--rounds", type=int, choices=[1, 2])
    p.add_argument("--mlm-epochs", dest="mlm_epochs", type=int)
    p.add_argument("--mlm-learning-rate", dest="mlm_learning_rate", type=float)
    p.add_argument("--mask-rate", dest="mask_rate", type=float)
    p.add_argument("--mix-stage1", dest="mix_stage1", action="store_true", default=None, help="Train Stage 2' on Stage 1 pairs plus hard negatives")
    p.add_argument("--k", type=int, help="Depth of the evaluation run")
    p.add_argument("--ks", help="Recall cut-offs reported when qrels cover the evaluation queries")

    p = sub.add_parser("retrieve", help="Rank queries -> run.<tag>.txt")
    _common(p)
    _corpus_args(p, queries=True)
    _vocab_args(p, scheme=True)
    _scorer_args(p)
    p.add_argument("--checkpoint", help="Encoder checkpoint for --scorer dense")
    p.add_argument("--k", type=int)

    p = sub.add_parser("fuse", help="Weighted fusion -> run.fused.txt")
    _common(p)
    p.add_argument("--runs", help="Three run files, comma separated, in alpha,beta,theta order")
    p.add_argument("--weights", help="alpha,beta,theta summing to 1")
    p.add_argument("--k", type=int)

    p = sub.add_parser("gridsearch", help="Weight grid search -> gridsearch.csv, gridsearch.txt")
    _common(p)
    p.add_argument("--runs", help="Three run files, comma separated")
    p.add_argument("--qrels")
    p.add_argument("--step", help="Grid step dividing 1 exactly (default 0.05)")
    p.add_argument("--objective", help="recall@K, mrr@K, map@K or ndcg@K (default recall@3)")
    p.add_argument("--k", type=int)
    p.add_argument("--hit-rate", dest="hit_rate", action="store_true", default=None)

    p = sub.add_parser("eval", help="Evaluate a run file -> eval.csv")
    _common(p)
    p.add_argument("--run", help="TREC run file")
    p.add_argument("--qrels")
    p.add_argument("--ks", help="Recall cut-offs, comma separated (default 3,5,10,20,50,100,200)")
    p.add_argument("--hit-rate", dest="hit_rate", action="store_true", default=None, help="Recall@k as 'at least one relevant found'")

    return parser


# ---------------------------------------------------------------------------
# shared loading helpers
# ---------------------------------------------------------------------------

def _out_dir(cfg: RunConfig) -> Path:
    path = Path(cfg.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _corpus(cfg: RunConfig) -> List[Document]:
    cfg.require("corpus")
    return load_corpus(cfg.corpus, cfg.corpus_format)


def _queries(cfg: RunConfig, key: str = "queries") -> List[Query]:
    cfg.require(key)
    return load_queries(getattr(cfg, key))


def _vocab(cfg: RunConfig) -> Vocabulary:
    cfg.require("vocab")
    return load_vocabulary(cfg.vocab)


def _run_files(cfg: RunConfig) -> List[str]:
    cfg.require("runs")
    paths = [p.strip() for p in cfg.runs.split(",") if p.strip()]
    if len(paths) != 3:
        raise ConfigError(f"runs: expected three comma-separated run files, got {len(paths)}")
    return paths


def _seeded(cfg: RunConfig) -> PipelineConfig:
    return PipelineConfig.from_run_config(cfg)


def _start_params(cfg: RunConfig, vocab: Vocabulary):
    if cfg.checkpoint:
        return load_checkpoint(cfg.checkpoint, vocab)
    cfg.require("seed")
    return init_params(vocab, cfg.dim, cfg.seed)


def _emit(label: str, path: Path) -> None:
    print(f"[{label}] wrote {path}")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_ingest(cfg: RunConfig) -> int:
    docs = _corpus(cfg)
    queries = load_queries(cfg.queries) if cfg.queries else []
    qrels = load_qrels(cfg.qrels) if cfg.qrels else None
    vocab = build_vocabulary(docs + queries, TokenizerScheme.parse(cfg.scheme), cfg.min_count)
    out = _out_dir(cfg)
    save_vocabulary(vocab, out / "vocab.txt")
    summary = {
        "documents": len(docs),
        "queries": len(queries),
        "qrels_judgments": len(qrels) if qrels is not None else 0,
        "qrels_queries": len(qrels.query_ids()) if qrels is not None else 0,
        "scheme": str(vocab.scheme),
        "vocab_size": vocab.size,
        "vocab_fingerprint": vocab.fingerprint,
    }
    with open(out / "ingest.yaml", "w", encoding="utf-8") as f:
        yaml.safe_dump(summary, f, sort_keys=False)
    print(yaml.safe_dump(summary, sort_keys=False).rstrip())
    _emit("ingest", out / "vocab.txt")
    return EXIT_OK


def cmd_index(cfg: RunConfig) -> int:
    vocab = _vocab(cfg)
    index = build_index(_corpus(cfg), vocab.scheme, vocab)
    path = _out_dir(cfg) / "index.json"
    save_index(index, path)
    print(f"[index] N={index.doc_count} terms={len(index.postings)} avgdl={index.avg_doc_length:.3f}")
    _emit("index", path)
    return EXIT_OK


def cmd_pretrain(cfg: RunConfig) -> int:
    pc = _seeded(cfg)
    vocab = _vocab(cfg)
    encoded = EncodedCollection.encode(vocab, _corpus(cfg), [])
    stats = MlmStats()
    params = mlm_pretrain(_start_params(cfg, vocab), encoded.doc_sequences, pc.mlm, stats=stats)
    path = _out_dir(cfg) / "checkpoint.mlm.bin"
    save_checkpoint(params.with_embeddings(params.embeddings, stage="phase1-mlm"), path)
    print(f"[pretrain] skipped doc passes={stats.skipped_docs} forced masks={stats.forced_masks}")
    _emit("pretrain", path)
    return EXIT_OK


def _sparse_index(cfg: RunConfig, vocab: Vocabulary, docs: Sequence[Document]):
    if cfg.index:
        return load_index(cfg.index, vocab)
    return build_index(docs, vocab.scheme, vocab)


def cmd_stage1(cfg: RunConfig) -> int:
    vocab = _vocab(cfg)
    docs = _corpus(cfg)
    queries = _queries(cfg)
    cfg.require("qrels")
    qrels = load_qrels(cfg.qrels)
    if cfg.scorer == "dense":
        encoded = EncodedCollection.encode(vocab, docs, queries)
        params = _start_params(cfg, vocab)
        candidates = dense_retrieve_many(params, encoded.docs, encoded.query_items(), cfg.top_n, jobs=cfg.jobs, tag="stage1", progress=cfg.progress)
    else:
        scorer = Scorer.parse(cfg.scorer, cfg.k1, cfg.b, cfg.delta)
        candidates = sparse_retrieve_many(_sparse_index(cfg, vocab, docs), queries, scorer, cfg.top_n, jobs=cfg.jobs, progress=cfg.progress)
    pairs = stage1_label(candidates, qrels, cfg.top_n, cfg.neg_per_query)
    check_label_soundness(pairs, qrels)
    path = _out_dir(cfg) / "pairs.stage1.tsv"
    write_pairs(pairs, path)
    print(f"[stage1] pairs={len(pairs)} skipped queries={pairs.skipped_queries} zero-negative queries={pairs.zero_negative_queries}")
    _emit("stage1", path)
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    pc = _seeded(cfg)
    vocab = _vocab(cfg)
    cfg.require("pairs")
    pairs = read_pairs(cfg.pairs)
    encoded = EncodedCollection.encode(vocab, _corpus(cfg), _queries(cfg))
    stage = "stage2-prime" if pairs.provenance.startswith("stage3") else "stage2"
    params = stage2_train(_start_params(cfg, vocab), pairs, encoded, pc.train, stage=stage)
    path = _out_dir(cfg) / "checkpoint.bin"
    save_checkpoint(params, path)
    _emit("train", path)
    return EXIT_OK


def cmd_mine(cfg: RunConfig) -> int:
    vocab = _vocab(cfg)
    cfg.require("checkpoint", "qrels")
    params = load_checkpoint(cfg.checkpoint, vocab)
    qrels = load_qrels(cfg.qrels)
    encoded = EncodedCollection.encode(vocab, _corpus(cfg), _queries(cfg))
    pairs = stage3_mine(params, encoded, qrels, cfg.top_n, cfg.neg_per_query, cfg.jobs, cfg.progress)
    check_label_soundness(pairs, qrels)
    path = _out_dir(cfg) / "pairs.stage3.tsv"
    write_pairs(pairs, path)
    print(f"[mine] pairs={len(pairs)} zero-negative queries={pairs.zero_negative_queries}")
    _emit("mine", path)
    return EXIT_OK


def cmd_run_pipeline(cfg: RunConfig) -> int:
    pc = _seeded(cfg)
    variant = PipelineVariant.parse(cfg.variant, cfg.rounds)
    docs = _corpus(cfg)
    queries = _queries(cfg)
    cfg.require("qrels")
    qrels = load_qrels(cfg.qrels)
    eval_queries = load_queries(cfg.eval_queries) if cfg.eval_queries else None
    input_paths = {"corpus": cfg.corpus, "queries": cfg.queries, "qrels": cfg.qrels}
    if cfg.eval_queries:
        input_paths["eval_queries"] = cfg.eval_queries

    result = run_pipeline(variant, docs, queries, qrels, pc, eval_queries, _out_dir(cfg), input_paths, progress=cfg.progress)
    print(f"[run-pipeline] {variant.label} -> {result.run_dir}")
    for line in result.manifest.lines:
        print(f"[manifest] {line}")
    report = evaluate(result.runs, qrels, cfg.ks, cfg.hit_rate)
    if report.query_count:
        print(format_report(report, title=variant.label))
        write_report_csv(report, result.run_dir / "eval.csv")
    return EXIT_OK


def cmd_retrieve(cfg: RunConfig) -> int:
    docs = _corpus(cfg)
    queries = _queries(cfg)
    if cfg.scorer == "dense":
        vocab = _vocab(cfg)
        cfg.require("checkpoint")
        params = load_checkpoint(cfg.checkpoint, vocab)
        encoded = EncodedCollection.encode(vocab, docs, [])
        runs = dense_retrieve_many(params, encoded.docs, encoded.encode_queries(queries), cfg.k, jobs=cfg.jobs, progress=cfg.progress)
        tag = "dense"
    else:
        vocab = load_vocabulary(cfg.vocab) if cfg.vocab else build_vocabulary(docs, TokenizerScheme.parse(cfg.scheme), cfg.min_count)
        scorer = Scorer.parse(cfg.scorer, cfg.k1, cfg.b, cfg.delta)
        runs = sparse_retrieve_many(_sparse_index(cfg, vocab, docs), queries, scorer, cfg.k, jobs=cfg.jobs, progress=cfg.progress)
        tag = scorer.tag
    path = _out_dir(cfg) / f"run.{tag}.txt"
    write_run(runs, path)
    _emit("retrieve", path)
    return EXIT_OK


def cmd_fuse(cfg: RunConfig) -> int:
    a, b, c = (read_run(p) for p in _run_files(cfg))
    w = WeightTriple(*cfg.weight_fractions)
    fused = fuse_runs(a, b, c, w, cfg.k)
    path = _out_dir(cfg) / "run.fused.txt"
    write_run(fused, path)
    print(f"[fuse] weights {w} over {len(fused)} queries")
    _emit("fuse", path)
    return EXIT_OK


def cmd_gridsearch(cfg: RunConfig) -> int:
    run_sets = [read_run(p) for p in _run_files(cfg)]
    cfg.require("qrels")
    qrels = load_qrels(cfg.qrels)
    result = grid_search(run_sets, qrels, cfg.objective, cfg.step_fraction, cfg.k, cfg.hit_rate, cfg.jobs, cfg.progress)
    out = _out_dir(cfg)
    write_heatmap_csv(result, out / "gridsearch.csv")
    report = format_grid_report(result)
    (out / "gridsearch.txt").write_text(report + "\n", encoding="utf-8")
    print(report)
    _emit("gridsearch", out / "gridsearch.csv")
    return EXIT_OK


def cmd_eval(cfg: RunConfig) -> int:
    cfg.require("run", "qrels")
    report = evaluate(read_run(cfg.run), load_qrels(cfg.qrels), cfg.ks, cfg.hit_rate)
    print(format_report(report, title=str(cfg.run)))
    path = _out_dir(cfg) / "eval.csv"
    write_report_csv(report, path)
    _emit("eval", path)
    return EXIT_OK


COMMANDS: Dict[str, Callable[[RunConfig], int]] = {
    "ingest": cmd_ingest,
    "index": cmd_index,
    "pretrain": cmd_pretrain,
    "stage1": cmd_stage1,
    "train": cmd_train,
    "mine": cmd_mine,
    "run-pipeline": cmd_run_pipeline,
    "retrieve": cmd_retrieve,
    "fuse": cmd_fuse,
    "gridsearch": cmd_gridsearch,
    "eval": cmd_eval,
}


def _cli_values(ns: argparse.Namespace) -> Dict[str, Any]:
    return {k: getattr(ns, k) for k in CONFIG_KEYS if getattr(ns, k, None) is not None}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except UsageError as e:
        print(_error_line("usage", e), file=sys.stderr)
        return EXIT_USAGE

    configure_logging(ns.log_level)
    try:
        file_values = load_config_file(ns.config) if ns.config else None
        cfg = resolve_config(file_values, _cli_values(ns))
        print("[config]")
        print(format_config(cfg))
        return COMMANDS[ns.command](cfg)
    except (ConfigError, FileNotFoundError) as e:
        logger.error("{}", e)
        print(_error_line("usage", e), file=sys.stderr)
        return EXIT_USAGE
    except (RetrievalError, ValueError) as e:
        logger.error("{}", e)
        print(_error_line("runtime", e), file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())

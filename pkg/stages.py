"""
Multi-stage training pipelines.

Phase 1 (optional) pretrains the embedding table with MLM. Stage 1 retrieves
top_n candidates per training query (BM25+ or an encoder) and labels them
against qrels: every relevant document is a positive, the highest-ranked
non-relevant candidates are negatives. Stage 2 trains the encoder on those
pairs. With rounds=2, Stage 3 mines hard negatives with the Stage 2 model and
Stage 2' continues training on them.

Every stage appends one line to the run's manifest.
"""

from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

from loguru import logger

from config import RunConfig, __version__
from corpus import Document, Qrels, Query, RunList, write_run
from encoder import (
    EncoderParams,
    TrainConfig,
    TrainingPair,
    dense_retrieve_many,
    init_params,
    mlm_pretrain,
    save_checkpoint,
    train_contrastive,
)
from errors import FormatError, TrainingError
from sparse import Bm25Params, Scorer, build_index, sparse_retrieve_many
from tokenizer import TokenizerScheme, Vocabulary, build_vocabulary, encode_ids

CANDIDATE_SOURCES = ("bm25plus", "lms_random_init", "lms_mlm_pretrained")
_SLUGS = {"bm25plus": "bm25plus", "lms_random_init": "lms", "lms_mlm_pretrained": "lms-mlm"}
_ALIASES = {**{v: k for k, v in _SLUGS.items()}, **{k: k for k in _SLUGS}}
_LABELS = {"bm25plus": "BM25Plus ({})", "lms_random_init": "LMS ({})", "lms_mlm_pretrained": "LMS (Finetuned MLM) {}"}


@dataclass(frozen=True)
class PipelineVariant:
    candidate_source: str = "lms_mlm_pretrained"
    rounds: int = 2

    def __post_init__(self):
        if self.candidate_source not in CANDIDATE_SOURCES:
            raise ValueError(f"unknown candidate source {self.candidate_source!r}")
        if self.rounds not in (1, 2):
            raise ValueError(f"rounds must be 1 or 2, got {self.rounds}")

    @classmethod
    def parse(cls, name: str, rounds: int = 2) -> "PipelineVariant":
        """Accepts 'bm25plus', 'lms', 'lms-mlm' or the candidate source names."""
        key = name.strip().lower()
        if key not in _ALIASES:
            raise ValueError(f"unknown pipeline variant {name!r} (expected bm25plus, lms or lms-mlm)")
        return cls(_ALIASES[key], rounds)

    @property
    def slug(self) -> str:
        return _SLUGS[self.candidate_source]

    @property
    def uses_mlm(self) -> bool:
        return self.candidate_source == "lms_mlm_pretrained"

    @property
    def label(self) -> str:
        return _LABELS[self.candidate_source].format(f"Round {self.rounds}")

    @property
    def tag(self) -> str:
        return f"{self.slug}-r{self.rounds}"


@dataclass(frozen=True)
class LabeledPair:
    query_id: str
    doc_id: str
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")


@dataclass(frozen=True)
class EncodedCollection:
    """Token ids of the documents (in corpus order) and of the training queries."""

    vocab: Vocabulary
    docs: Tuple[Tuple[str, Tuple[int, ...]], ...]
    queries: Mapping[str, Tuple[int, ...]]

    @classmethod
    def encode(cls, vocab: Vocabulary, docs: Sequence[Document], queries: Sequence[Query]) -> "EncodedCollection":
        encoded_docs = tuple((d.doc_id, tuple(encode_ids(d.text, vocab.scheme, vocab))) for d in docs)
        encoded_queries = {q.query_id: tuple(encode_ids(q.text, vocab.scheme, vocab)) for q in queries}
        return cls(vocab, encoded_docs, encoded_queries)

    def __post_init__(self):
        object.__setattr__(self, "_doc_lookup", dict(self.docs))

    def doc_tokens(self, doc_id: str) -> Tuple[int, ...]:
        return self._doc_lookup[doc_id]  # type: ignore[attr-defined]

    def query_items(self) -> List[Tuple[str, Tuple[int, ...]]]:
        return list(self.queries.items())

    def encode_queries(self, queries: Sequence[Query]) -> List[Tuple[str, Tuple[int, ...]]]:
        return [(q.query_id, tuple(encode_ids(q.text, self.vocab.scheme, self.vocab))) for q in queries]

    @property
    def doc_sequences(self) -> List[Tuple[int, ...]]:
        return [ids for _, ids in self.docs]


@dataclass
class PairSet:
    pairs: Tuple[LabeledPair, ...]
    provenance: str
    positives_per_query: Dict[str, int] = field(default_factory=dict)
    negatives_per_query: Dict[str, int] = field(default_factory=dict)
    skipped_queries: int = 0
    zero_negative_queries: int = 0

    @classmethod
    def from_pairs(cls, pairs: Sequence[LabeledPair], provenance: str) -> "PairSet":
        pos: Dict[str, int] = {}
        neg: Dict[str, int] = {}
        for p in pairs:
            counts = pos if p.label == 1 else neg
            counts[p.query_id] = counts.get(p.query_id, 0) + 1
        return cls(tuple(pairs), provenance, pos, neg)

    def __len__(self) -> int:
        return len(self.pairs)

    def negatives(self) -> List[LabeledPair]:
        return [p for p in self.pairs if p.label == 0]

    def negatives_for(self, query_id: str) -> List[str]:
        return [p.doc_id for p in self.pairs if p.label == 0 and p.query_id == query_id]

    def training_pairs(self, encoded: EncodedCollection) -> List[TrainingPair]:
        out = []
        for p in self.pairs:
            if p.query_id not in encoded.queries:
                raise TrainingError(f"pair references unknown query {p.query_id!r}")
            try:
                doc_tokens = encoded.doc_tokens(p.doc_id)
            except KeyError:
                raise TrainingError(f"pair references unknown document {p.doc_id!r}") from None
            out.append(TrainingPair(encoded.queries[p.query_id], doc_tokens, p.label))
        return out

    def merged(self, other: "PairSet") -> "PairSet":
        """Union in order self, other; a (query, doc, label) seen twice is kept once."""
        combined = list(dict.fromkeys(self.pairs + other.pairs))
        return PairSet.from_pairs(combined, f"{self.provenance}+{other.provenance}")


def stage1_label(
    candidates: Sequence[RunList],
    qrels: Qrels,
    top_n: int,
    neg_per_query: int,
    provenance: str = "stage1",
) -> PairSet:
    """Positives are every qrels-relevant doc; negatives the best-ranked non-relevant candidates."""
    if top_n < 1:
        raise ValueError(f"top_n must be >= 1, got {top_n}")
    if neg_per_query < 0:
        raise ValueError(f"neg_per_query must be >= 0, got {neg_per_query}")

    pairs: List[LabeledPair] = []
    pos_counts: Dict[str, int] = {}
    neg_counts: Dict[str, int] = {}
    skipped = zero_neg = 0
    for run in candidates:
        relevant = qrels.relevant(run.query_id)
        if not relevant:
            skipped += 1
            continue
        negatives = [d for d in run.top(top_n) if d not in relevant][:neg_per_query]
        if neg_per_query and not negatives:
            zero_neg += 1
        pairs.extend(LabeledPair(run.query_id, d, 1) for d in sorted(relevant))
        pairs.extend(LabeledPair(run.query_id, d, 0) for d in negatives)
        pos_counts[run.query_id] = len(relevant)
        neg_counts[run.query_id] = len(negatives)

    if skipped:
        logger.warning("{}: skipped {} queries with no relevant documents", provenance, skipped)
    if zero_neg:
        logger.warning("{}: {} queries produced no negatives within the top {}", provenance, zero_neg, top_n)
    logger.info("{}: {} pairs ({} positive, {} negative)", provenance, len(pairs), sum(pos_counts.values()), sum(neg_counts.values()))
    return PairSet(tuple(pairs), provenance, pos_counts, neg_counts, skipped, zero_neg)


def check_label_soundness(pairset: PairSet, qrels: Qrels) -> None:
    for p in pairset.pairs:
        if bool(p.label) != qrels.is_relevant(p.query_id, p.doc_id):
            raise TrainingError(
                f"{pairset.provenance}: pair ({p.query_id}, {p.doc_id}) labelled {p.label} "
                f"but qrels grade is {qrels.grade(p.query_id, p.doc_id)}"
            )


def stage2_train(
    base: EncoderParams,
    pairset: PairSet,
    encoded: EncodedCollection,
    cfg: TrainConfig,
    variant: Optional[PipelineVariant] = None,
    stage: str = "stage2",
) -> EncoderParams:
    if not pairset.pairs:
        raise TrainingError("no training pairs")
    trained = train_contrastive(base, pairset.training_pairs(encoded), cfg)
    provenance = {"stage": stage, "train_seed": cfg.seed, "pairs": pairset.provenance}
    if variant is not None:
        provenance["variant"] = variant.slug
    return trained.with_embeddings(trained.embeddings, **provenance)


def stage3_mine(
    model: EncoderParams,
    encoded: EncodedCollection,
    qrels: Qrels,
    top_n: int,
    neg_per_query: int,
    jobs: int = 1,
    progress: bool = False,
) -> PairSet:
    """Stage 1 labeling over candidates ranked by the trained encoder."""
    candidates = dense_retrieve_many(model, encoded.docs, encoded.query_items(), top_n, jobs=jobs, tag="stage3", progress=progress)
    return stage1_label(candidates, qrels, top_n, neg_per_query, provenance="stage3")


def write_pairs(pairset: PairSet, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"# provenance={pairset.provenance}\n")
        for p in pairset.pairs:
            f.write(f"{p.query_id}\t{p.doc_id}\t{p.label}\n")


def read_pairs(path: str | Path) -> PairSet:
    path = Path(path)
    provenance = "unknown"
    pairs: List[LabeledPair] = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            if line.startswith("# provenance="):
                provenance = line[len("# provenance="):].strip()
                continue
            parts = line.split("\t")
            if len(parts) != 3 or parts[2] not in ("0", "1"):
                raise FormatError(path, line_no, "expected 'qid<TAB>docid<TAB>label' with label 0 or 1")
            pairs.append(LabeledPair(parts[0], parts[1], int(parts[2])))
    return PairSet.from_pairs(pairs, provenance)


class Manifest:
    """Append-only stage log; kept in memory, and on disk when a path is given."""

    def __init__(self, path: Optional[Path] = None):
        self.path = Path(path) if path else None
        self.lines: List[str] = []
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, stage: str, inputs: Sequence[str], outputs: Sequence[str], seed: Optional[int], seconds: float, status: str = "ok") -> str:
        line = (
            f"stage={stage} inputs={','.join(inputs) or '-'} outputs={','.join(outputs) or '-'} "
            f"seed={seed if seed is not None else '-'} seconds={seconds:.3f} version={__version__} status={status}"
        )
        self.lines.append(line)
        if self.path:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(line + "\n")
        return line

    @contextmanager
    def stage(self, name: str, inputs: Sequence[str], outputs: Sequence[str], seed: Optional[int]) -> Iterator[None]:
        logger.info("== {} ==", name)
        start = time.perf_counter()
        try:
            yield
        except BaseException:
            self.append(name, inputs, outputs, seed, time.perf_counter() - start, status="error")
            raise
        self.append(name, inputs, outputs, seed, time.perf_counter() - start)

    @property
    def stages(self) -> List[str]:
        return [line.split(" ", 1)[0][len("stage="):] for line in self.lines]


@dataclass(frozen=True)
class PipelineConfig:
    seed: int
    scheme: TokenizerScheme = field(default_factory=TokenizerScheme.whitespace_lower)
    min_count: int = 1
    dim: int = 32
    train: TrainConfig = field(default_factory=TrainConfig)
    mlm: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=5))
    top_n: int = 100
    neg_per_query: int = 8
    mix_stage1: bool = False
    k: int = 200
    bm25: Bm25Params = field(default_factory=Bm25Params)
    jobs: int = 1

    @classmethod
    def from_run_config(cls, rc: RunConfig) -> "PipelineConfig":
        rc.require("seed")
        train = TrainConfig(
            margin=rc.margin,
            learning_rate=rc.learning_rate,
            epochs=rc.epochs,
            batch_size=rc.batch_size,
            seed=rc.seed,
            literal_cosine_distance=rc.literal_cosine_distance,
            progress=rc.progress,
        )
        mlm = TrainConfig(
            learning_rate=rc.mlm_learning_rate,
            epochs=rc.mlm_epochs,
            batch_size=rc.batch_size,
            seed=rc.seed,
            mask_rate=rc.mask_rate,
            progress=rc.progress,
        )
        return cls(
            seed=rc.seed,
            scheme=TokenizerScheme.parse(rc.scheme),
            min_count=rc.min_count,
            dim=rc.dim,
            train=train,
            mlm=mlm,
            top_n=rc.top_n,
            neg_per_query=rc.neg_per_query,
            mix_stage1=rc.mix_stage1,
            k=rc.k,
            bm25=Bm25Params(rc.k1, rc.b, rc.delta),
            jobs=rc.jobs,
        )


@dataclass
class PipelineResult:
    variant: PipelineVariant
    params: EncoderParams
    runs: List[RunList]
    vocab: Vocabulary
    stage1_pairs: PairSet
    stage2_params: EncoderParams
    stage3_pairs: Optional[PairSet] = None
    manifest: Manifest = field(default_factory=Manifest)
    run_dir: Optional[Path] = None


def run_dir_name(variant: PipelineVariant, seed: int) -> str:
    return f"{variant.slug}-round{variant.rounds}-seed{seed}"


def run_pipeline(
    variant: PipelineVariant,
    corpus: Sequence[Document],
    queries: Sequence[Query],
    qrels: Qrels,
    cfg: PipelineConfig,
    eval_queries: Optional[Sequence[Query]] = None,
    output_dir: Optional[str | Path] = None,
    input_paths: Optional[Mapping[str, str]] = None,
    progress: bool = False,
) -> PipelineResult:
    """
    Run one named variant end to end and rank the evaluation queries
    (the training queries when none are given) with the final encoder.
    """
    run_dir = Path(output_dir) / run_dir_name(variant, cfg.seed) if output_dir is not None else None
    manifest = Manifest(run_dir / "manifest.txt" if run_dir else None)
    src = {"corpus": "corpus", "queries": "queries", "qrels": "qrels", "eval_queries": "eval_queries", **(input_paths or {})}

    def artifact(name: str) -> str:
        return str(run_dir / name) if run_dir else name

    logger.info("Pipeline {} (seed {})", variant.label, cfg.seed)
    vocab = build_vocabulary(list(corpus) + list(queries), cfg.scheme, cfg.min_count)
    encoded = EncodedCollection.encode(vocab, corpus, queries)
    base = init_params(vocab, cfg.dim, cfg.seed)

    if variant.uses_mlm:
        with manifest.stage("phase1-mlm", [src["corpus"]], [artifact("checkpoint.mlm.bin")], cfg.seed):
            base = mlm_pretrain(base, encoded.doc_sequences, replace(cfg.mlm, seed=cfg.seed))
            if run_dir:
                save_checkpoint(base, run_dir / "checkpoint.mlm.bin")

    stage1_inputs = [src["queries"], src["qrels"], src["corpus"]]
    with manifest.stage("stage1", stage1_inputs, [artifact("pairs.stage1.tsv")], cfg.seed):
        if variant.candidate_source == "bm25plus":
            index = build_index(corpus, cfg.scheme, vocab)
            candidates = sparse_retrieve_many(index, queries, Scorer("bm25plus", cfg.bm25), cfg.top_n, jobs=cfg.jobs, progress=progress)
        else:
            candidates = dense_retrieve_many(base, encoded.docs, encoded.query_items(), cfg.top_n, jobs=cfg.jobs, tag="stage1", progress=progress)
        stage1_pairs = stage1_label(candidates, qrels, cfg.top_n, cfg.neg_per_query)
        check_label_soundness(stage1_pairs, qrels)
        if run_dir:
            write_pairs(stage1_pairs, run_dir / "pairs.stage1.tsv")

    stage2_name = "checkpoint.stage2.bin" if variant.rounds == 2 else "checkpoint.bin"
    with manifest.stage("stage2", [artifact("pairs.stage1.tsv")], [artifact(stage2_name)], cfg.seed):
        model = stage2_train(base, stage1_pairs, encoded, replace(cfg.train, seed=cfg.seed), variant, "stage2")
        if run_dir:
            save_checkpoint(model, run_dir / stage2_name)
    stage2_model = model

    stage3_pairs = None
    if variant.rounds == 2:
        with manifest.stage("stage3", [artifact(stage2_name), src["qrels"]], [artifact("pairs.stage3.tsv")], cfg.seed):
            stage3_pairs = stage3_mine(model, encoded, qrels, cfg.top_n, cfg.neg_per_query, cfg.jobs, progress)
            check_label_soundness(stage3_pairs, qrels)
            if run_dir:
                write_pairs(stage3_pairs, run_dir / "pairs.stage3.tsv")

        training = stage3_pairs.merged(stage1_pairs) if cfg.mix_stage1 else stage3_pairs
        with manifest.stage("stage2-prime", [artifact(stage2_name), artifact("pairs.stage3.tsv")], [artifact("checkpoint.bin")], cfg.seed + 1):
            model = stage2_train(model, training, encoded, replace(cfg.train, seed=cfg.seed + 1), variant, "stage2-prime")
            if run_dir:
                save_checkpoint(model, run_dir / "checkpoint.bin")

    targets = list(eval_queries) if eval_queries is not None else list(queries)
    eval_source = src["eval_queries"] if eval_queries is not None else src["queries"]
    with manifest.stage("eval", [artifact("checkpoint.bin"), eval_source], [artifact("run.txt")], cfg.seed):
        runs = dense_retrieve_many(model, encoded.docs, encoded.encode_queries(targets), cfg.k, jobs=cfg.jobs, tag=variant.tag, progress=progress)
        if run_dir:
            write_run(runs, run_dir / "run.txt")

    return PipelineResult(variant, model, runs, vocab, stage1_pairs, stage2_model, stage3_pairs, manifest, run_dir)


def run_baseline(
    scorer: Scorer,
    corpus: Sequence[Document],
    queries: Sequence[Query],
    scheme: TokenizerScheme,
    k: int,
    jobs: int = 1,
    min_count: int = 1,
) -> List[RunList]:
    """TF-IDF / BM25 / BM25+ ranking over a vocabulary built from the corpus alone."""
    vocab = build_vocabulary(corpus, scheme, min_count)
    index = build_index(corpus, scheme, vocab)
    return sparse_retrieve_many(index, queries, scorer, k, jobs=jobs)

"""
Desk-scale dual encoder.

A document or query is embedded as the L2-normalised mean of its token rows in
a single embedding table shared by both towers. Training minimises the
contrastive loss on cosine distance d = 1 - cos(q, x):

    loss = 0.5 * ( label * d^2 + (1 - label) * max(0, m - d)^2 )

with label = 1 for similar pairs. An MLM objective with tied input/output
weights can pretrain the same table: the masked token is predicted from the
dot product of the pooled unmasked context with every embedding row.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from tqdm import tqdm

from corpus import RunList
from errors import CheckpointError, FormatError, IndexStateError, TrainingError
from tokenizer import MASK_ID, TokenizerScheme, Vocabulary

CHECKPOINT_FORMAT_VERSION = 1

TokenIds = Sequence[int]
EpochCallback = Callable[[int, float], None]


@dataclass(frozen=True)
class TrainConfig:
    margin: float = 0.5
    learning_rate: float = 0.1
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0
    mask_rate: float = 0.15
    literal_cosine_distance: bool = False
    progress: bool = False

    def __post_init__(self):
        if not 0.0 < self.margin <= 1.0:
            raise ValueError(f"margin must be in (0, 1], got {self.margin}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 < self.mask_rate < 1.0:
            raise ValueError(f"mask_rate must be in (0, 1), got {self.mask_rate}")


@dataclass(frozen=True)
class TrainingPair:
    """A (query, document) pair; label 1 = similar, 0 = dissimilar."""

    query_tokens: Tuple[int, ...]
    doc_tokens: Tuple[int, ...]
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")
        object.__setattr__(self, "query_tokens", tuple(int(t) for t in self.query_tokens))
        object.__setattr__(self, "doc_tokens", tuple(int(t) for t in self.doc_tokens))


@dataclass(eq=False)
class EncoderParams:
    embeddings: np.ndarray
    scheme: TokenizerScheme
    vocab_fingerprint: str
    provenance: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        emb = np.array(self.embeddings, dtype=np.float64, copy=True)
        if emb.ndim != 2 or emb.shape[1] < 2:
            raise ValueError(f"embeddings must be vocab_size x dim with dim >= 2, got shape {emb.shape}")
        if not np.all(np.isfinite(emb)):
            raise ValueError("embeddings contain non-finite entries")
        emb.setflags(write=False)
        self.embeddings = emb

    @property
    def dim(self) -> int:
        return int(self.embeddings.shape[1])

    @property
    def vocab_size(self) -> int:
        return int(self.embeddings.shape[0])

    def with_embeddings(self, embeddings: np.ndarray, **provenance: Any) -> "EncoderParams":
        return EncoderParams(embeddings, self.scheme, self.vocab_fingerprint, {**self.provenance, **provenance})


def init_params(vocab: Vocabulary, dim: int, seed: int) -> EncoderParams:
    """Uniform init in [-0.5/dim, 0.5/dim] from the seeded generator."""
    if dim < 2:
        raise ValueError(f"dim must be >= 2, got {dim}")
    rng = np.random.default_rng(seed)
    emb = rng.uniform(-0.5 / dim, 0.5 / dim, size=(vocab.size, dim))
    return EncoderParams(emb, vocab.scheme, vocab.fingerprint, {"init_seed": int(seed)})


def _check_ids(ids: np.ndarray, vocab_size: int) -> None:
    if ids.size and (ids.min() < 0 or ids.max() >= vocab_size):
        bad = int(ids.max()) if ids.max() >= vocab_size else int(ids.min())
        raise ValueError(f"token id {bad} out of range for vocab_size {vocab_size}")


def _pool(W: np.ndarray, ids: np.ndarray) -> Tuple[np.ndarray, float]:
    """(unit vector, norm of the mean); zero vector and 0.0 for empty or zero means."""
    if ids.size == 0:
        return np.zeros(W.shape[1]), 0.0
    mean = W[ids].mean(axis=0)
    norm = float(np.linalg.norm(mean))
    if norm == 0.0:
        return np.zeros(W.shape[1]), 0.0
    return mean / norm, norm


def embed(params: EncoderParams, token_ids: TokenIds) -> np.ndarray:
    ids = np.asarray(token_ids, dtype=np.int64)
    _check_ids(ids, params.vocab_size)
    unit, _ = _pool(params.embeddings, ids)
    return unit


def embed_many(params: EncoderParams, sequences: Sequence[TokenIds]) -> np.ndarray:
    if not sequences:
        return np.zeros((0, params.dim))
    return np.vstack([embed(params, seq) for seq in sequences])


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = float(np.linalg.norm(u)), float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def _distance(sim: float, literal: bool) -> float:
    return sim if literal else 1.0 - sim


def contrastive_loss(sim: float, label: int, m: float = 0.5, literal: bool = False) -> float:
    d = _distance(sim, literal)
    hinge = max(0.0, m - d)
    return 0.5 * (label * d * d + (1 - label) * hinge * hinge)


def contrastive_loss_grad(sim: float, label: int, m: float = 0.5, literal: bool = False) -> float:
    """d loss / d sim."""
    d = _distance(sim, literal)
    dloss_dd = label * d - (1 - label) * max(0.0, m - d)
    return dloss_dd if literal else -dloss_dd


def pair_loss_and_grad(
    W: np.ndarray,
    pair: TrainingPair,
    margin: float,
    literal: bool = False,
    grad: Optional[np.ndarray] = None,
    scale: float = 1.0,
) -> float:
    """Loss of one pair; when `grad` is given, adds scale * dloss/dW into it."""
    q_ids = np.asarray(pair.query_tokens, dtype=np.int64)
    d_ids = np.asarray(pair.doc_tokens, dtype=np.int64)
    u, nu = _pool(W, q_ids)
    v, nv = _pool(W, d_ids)
    sim = float(np.dot(u, v)) if nu and nv else 0.0
    loss = contrastive_loss(sim, pair.label, margin, literal)
    if grad is None or not (nu and nv):
        return loss
    g = scale * contrastive_loss_grad(sim, pair.label, margin, literal)
    if g == 0.0:
        return loss
    # d sim / d mean_q = (v - sim * u) / |mean_q|, spread evenly over the query's tokens
    np.add.at(grad, q_ids, g * (v - sim * u) / (nu * q_ids.size))
    np.add.at(grad, d_ids, g * (u - sim * v) / (nv * d_ids.size))
    return loss


def batch_loss_and_grad(W: np.ndarray, pairs: Sequence[TrainingPair], margin: float, literal: bool = False) -> Tuple[float, np.ndarray]:
    grad = np.zeros_like(W)
    if not pairs:
        return 0.0, grad
    scale = 1.0 / len(pairs)
    total = 0.0
    for pair in pairs:
        total += pair_loss_and_grad(W, pair, margin, literal, grad, scale)
    return total / len(pairs), grad


def batch_loss(W: np.ndarray, pairs: Sequence[TrainingPair], margin: float, literal: bool = False) -> float:
    return sum(pair_loss_and_grad(W, p, margin, literal) for p in pairs) / len(pairs)


def _raise_if_non_finite(loss: float, grad: np.ndarray, what: str, epoch: int, batch: int) -> None:
    if not math.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise TrainingError(f"non-finite {what} loss/gradient at epoch {epoch} batch {batch}")


def train_contrastive(
    params: EncoderParams,
    pairs: Sequence[TrainingPair],
    cfg: TrainConfig,
    on_epoch: Optional[EpochCallback] = None,
) -> EncoderParams:
    """Mini-batch gradient descent on the mean batch contrastive loss."""
    if not pairs:
        raise TrainingError("no training pairs")
    for pair in pairs:
        _check_ids(np.asarray(pair.query_tokens + pair.doc_tokens, dtype=np.int64), params.vocab_size)

    W = params.embeddings.copy()
    rng = np.random.default_rng(cfg.seed)
    n = len(pairs)
    for epoch in tqdm(range(1, cfg.epochs + 1), desc="contrastive", disable=not cfg.progress):
        order = rng.permutation(n)
        total = 0.0
        for batch_no, start in enumerate(range(0, n, cfg.batch_size)):
            batch = [pairs[i] for i in order[start:start + cfg.batch_size]]
            loss, grad = batch_loss_and_grad(W, batch, cfg.margin, cfg.literal_cosine_distance)
            _raise_if_non_finite(loss, grad, "contrastive", epoch, batch_no)
            W -= cfg.learning_rate * grad
            total += loss * len(batch)
        mean_loss = total / n
        logger.info("contrastive epoch {}/{}: mean loss {:.6f}", epoch, cfg.epochs, mean_loss)
        if on_epoch:
            on_epoch(epoch, mean_loss)
    return params.with_embeddings(W)


def mlm_loss_and_grad(W: np.ndarray, token_ids: TokenIds, masked_positions: Sequence[int], grad: Optional[np.ndarray] = None, scale: float = 1.0) -> Optional[float]:
    """
    Mean cross-entropy over the masked positions, or None when no context is left.

    Masked positions are replaced by MASK; the context is the mean of the
    remaining token rows and the logits are W @ context (tied weights).
    """
    ids = np.asarray(token_ids, dtype=np.int64)
    masked = np.zeros(ids.size, dtype=bool)
    masked[list(masked_positions)] = True
    inputs = np.where(masked, MASK_ID, ids)
    context_ids = inputs[inputs != MASK_ID]
    targets = ids[masked]
    if context_ids.size == 0 or targets.size == 0:
        return None

    c = W[context_ids].mean(axis=0)
    z = W @ c
    z_max = float(z.max())
    log_norm = z_max + math.log(float(np.exp(z - z_max).sum()))
    loss = float(np.mean(log_norm - z[targets]))
    if grad is None:
        return loss

    dz = np.exp(z - log_norm)
    np.add.at(dz, targets, -1.0 / targets.size)
    dz *= scale
    grad += np.outer(dz, c)
    np.add.at(grad, context_ids, (W.T @ dz) / context_ids.size)
    return loss


@dataclass
class MlmStats:
    skipped_docs: int = 0
    forced_masks: int = 0


def draw_mask(rng: np.random.Generator, length: int, mask_rate: float, stats: Optional[MlmStats] = None) -> List[int]:
    """Independent Bernoulli masking with at least one masked position."""
    if length == 0:
        return []
    positions = np.flatnonzero(rng.random(length) < mask_rate).tolist()
    if not positions:
        positions = [int(rng.integers(length))]
        if stats is not None:
            stats.forced_masks += 1
    return positions


def mlm_pretrain(
    params: EncoderParams,
    docs: Sequence[TokenIds],
    cfg: TrainConfig,
    on_epoch: Optional[EpochCallback] = None,
    stats: Optional[MlmStats] = None,
) -> EncoderParams:
    """Desk-scale masked-token pretraining; documents with no context left are skipped and counted."""
    if not docs:
        raise TrainingError("no documents for MLM pretraining")
    seqs = [np.asarray(d, dtype=np.int64) for d in docs]
    for seq in seqs:
        _check_ids(seq, params.vocab_size)
    stats = stats if stats is not None else MlmStats()

    W = params.embeddings.copy()
    rng = np.random.default_rng(cfg.seed)
    n = len(seqs)
    for epoch in tqdm(range(1, cfg.epochs + 1), desc="mlm", disable=not cfg.progress):
        order = rng.permutation(n)
        total, counted = 0.0, 0
        for batch_no, start in enumerate(range(0, n, cfg.batch_size)):
            batch = []
            for i in order[start:start + cfg.batch_size]:
                seq = seqs[i]
                positions = draw_mask(rng, seq.size, cfg.mask_rate, stats)
                if seq.size < 2 or len(positions) >= seq.size:
                    stats.skipped_docs += 1
                    continue
                batch.append((seq, positions))
            if not batch:
                continue
            grad = np.zeros_like(W)
            scale = 1.0 / len(batch)
            batch_total = 0.0
            for seq, positions in batch:
                batch_total += mlm_loss_and_grad(W, seq, positions, grad, scale)
            _raise_if_non_finite(batch_total, grad, "mlm", epoch, batch_no)
            W -= cfg.learning_rate * grad
            total += batch_total
            counted += len(batch)
        mean_loss = total / counted if counted else float("nan")
        logger.info("mlm epoch {}/{}: mean loss {:.6f} over {} docs", epoch, cfg.epochs, mean_loss, counted)
        if on_epoch:
            on_epoch(epoch, mean_loss)
    if stats.skipped_docs:
        logger.warning("MLM skipped {} document passes with no unmasked context", stats.skipped_docs)
    return params.with_embeddings(W, mlm_skipped_docs=stats.skipped_docs)


def mlm_probabilities(params: EncoderParams, context_ids: TokenIds) -> np.ndarray:
    """Softmax over the vocabulary for a masked slot given its context tokens."""
    c = params.embeddings[np.asarray(context_ids, dtype=np.int64)].mean(axis=0)
    z = params.embeddings @ c
    p = np.exp(z - z.max())
    return p / p.sum()


def _doc_matrix(params: EncoderParams, docs_encoded: Sequence[Tuple[str, TokenIds]]) -> Tuple[List[str], np.ndarray]:
    if not docs_encoded:
        raise IndexStateError("empty document set")
    doc_ids = [d for d, _ in docs_encoded]
    return doc_ids, embed_many(params, [ids for _, ids in docs_encoded])


def _rank(doc_ids: List[str], matrix: np.ndarray, q: np.ndarray, k: int, query_id: str, tag: str) -> RunList:
    scores = np.clip(matrix @ q, -1.0, 1.0)
    return RunList.ranked(query_id, zip(doc_ids, scores.tolist()), tag=tag, k=k)


def dense_retrieve(
    params: EncoderParams,
    docs_encoded: Sequence[Tuple[str, TokenIds]],
    query_ids: TokenIds,
    k: int,
    query_id: str = "q",
    tag: str = "dense",
) -> RunList:
    """Exact top-k by cosine similarity; ties go to the smaller doc_id."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    doc_ids, matrix = _doc_matrix(params, docs_encoded)
    return _rank(doc_ids, matrix, embed(params, query_ids), k, query_id, tag)


def dense_retrieve_many(
    params: EncoderParams,
    docs_encoded: Sequence[Tuple[str, TokenIds]],
    queries: Sequence[Tuple[str, TokenIds]],
    k: int,
    jobs: int = 1,
    tag: str = "dense",
    progress: bool = False,
) -> List[RunList]:
    """Embed the documents once, then rank every query; output follows input order."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    doc_ids, matrix = _doc_matrix(params, docs_encoded)

    def _one(item: Tuple[str, TokenIds]) -> RunList:
        qid, ids = item
        return _rank(doc_ids, matrix, embed(params, ids), k, qid, tag)

    if jobs <= 1:
        return [_one(q) for q in tqdm(queries, desc="dense retrieval", disable=not progress)]
    with ThreadPoolExecutor(max_workers=jobs) as executor:
        return list(tqdm(executor.map(_one, queries), total=len(queries), desc="dense retrieval", disable=not progress))


def margin_neighbors(
    params: EncoderParams,
    query_ids: TokenIds,
    docs_encoded: Sequence[Tuple[str, TokenIds]],
    margin: float = 0.5,
) -> List[Tuple[str, float]]:
    """Documents whose distance 1 - cos to the query is within the margin, nearest first."""
    doc_ids, matrix = _doc_matrix(params, docs_encoded)
    q = embed(params, query_ids)
    if not q.any():
        return []
    distances = 1.0 - np.clip(matrix @ q, -1.0, 1.0)
    inside = [(d, float(dist)) for d, dist, row in zip(doc_ids, distances, matrix) if row.any() and dist <= margin]
    return sorted(inside, key=lambda x: (x[1], x[0]))


def save_checkpoint(params: EncoderParams, path: str | Path) -> None:
    """JSON header line followed by the row-major little-endian float64 matrix."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "dim": params.dim,
        "vocab_size": params.vocab_size,
        "vocab_fingerprint": params.vocab_fingerprint,
        "scheme": str(params.scheme),
        "provenance": params.provenance,
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        f.write(np.ascontiguousarray(params.embeddings, dtype="<f8").tobytes(order="C"))


def load_checkpoint(path: str | Path, vocab: Optional[Vocabulary] = None) -> EncoderParams:
    path = Path(path)
    with open(path, "rb") as f:
        raw_header = f.readline()
        body = f.read()
    try:
        header = json.loads(raw_header.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(path, 1, "checkpoint header is not JSON") from e
    if header.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"{path}: checkpoint format version {header.get('format_version')}")
    if vocab is not None and header.get("vocab_fingerprint") != vocab.fingerprint:
        raise CheckpointError(f"{path}: checkpoint vocabulary fingerprint does not match")
    rows, dim = int(header["vocab_size"]), int(header["dim"])
    if len(body) != rows * dim * 8:
        raise CheckpointError(f"{path}: expected {rows}x{dim} float64 matrix, got {len(body)} bytes")
    matrix = np.frombuffer(body, dtype="<f8").reshape(rows, dim)
    return EncoderParams(matrix, TokenizerScheme.parse(header["scheme"]), header["vocab_fingerprint"], header.get("provenance") or {})

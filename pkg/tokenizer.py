"""
Tokenization schemes and the vocabulary shared by sparse scoring and the encoder.

Schemes:
  - whitespace_lower: split on unicode whitespace, lowercase, strip leading and
    trailing punctuation (internal punctuation is kept)
  - char_ngram(n): overlapping character n-grams of the text with all whitespace
    removed; suited to CJK text where words are not space-delimited
"""

from __future__ import annotations

import hashlib
import unicodedata
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, List, Mapping, Sequence, Tuple

from errors import CheckpointError, FormatError

PAD_ID = 0
MASK_ID = 1
UNK_ID = 2
SPECIAL_TOKENS: Tuple[str, ...] = ("[PAD]", "[MASK]", "[UNK]")

WHITESPACE_LOWER = "whitespace_lower"
CHAR_NGRAM = "char_ngram"


@dataclass(frozen=True)
class TokenizerScheme:
    name: str = WHITESPACE_LOWER
    n: int = 0

    def __post_init__(self):
        if self.name == CHAR_NGRAM:
            if int(self.n) < 1:
                raise ValueError(f"char_ngram needs n >= 1, got {self.n}")
        elif self.name == WHITESPACE_LOWER:
            object.__setattr__(self, "n", 0)
        else:
            raise ValueError(f"unknown tokenizer scheme {self.name!r}")

    @classmethod
    def whitespace_lower(cls) -> "TokenizerScheme":
        return cls(WHITESPACE_LOWER)

    @classmethod
    def char_ngram(cls, n: int = 2) -> "TokenizerScheme":
        return cls(CHAR_NGRAM, int(n))

    @classmethod
    def parse(cls, name: str) -> "TokenizerScheme":
        """Accepts 'whitespace_lower', 'char_ngram' (n=2) or 'char_ngram:3'."""
        name = (name or "").strip()
        if name == WHITESPACE_LOWER:
            return cls.whitespace_lower()
        if name.startswith(CHAR_NGRAM):
            _, _, n = name.partition(":")
            try:
                return cls.char_ngram(int(n) if n else 2)
            except ValueError as e:
                raise ValueError(f"bad char_ngram size in {name!r}") from e
        raise ValueError(f"unknown tokenizer scheme {name!r}")

    def __str__(self) -> str:
        return f"{CHAR_NGRAM}:{self.n}" if self.name == CHAR_NGRAM else WHITESPACE_LOWER


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def _strip_punct(token: str) -> str:
    start, end = 0, len(token)
    while start < end and _is_punct(token[start]):
        start += 1
    while end > start and _is_punct(token[end - 1]):
        end -= 1
    return token[start:end]


def tokenize(text: str, scheme: TokenizerScheme) -> List[str]:
    if not text:
        return []
    if scheme.name == WHITESPACE_LOWER:
        tokens = (_strip_punct(t.lower()) for t in text.split())
        return [t for t in tokens if t]
    stream = "".join(ch for ch in text if not ch.isspace())
    n = scheme.n
    if len(stream) < n:
        return []
    return [stream[i:i + n] for i in range(len(stream) - n + 1)]


def _text_of(item) -> str:
    return item if isinstance(item, str) else item.text


@dataclass(frozen=True)
class Vocabulary:
    id_to_token: Tuple[str, ...]
    scheme: TokenizerScheme

    def __post_init__(self):
        if tuple(self.id_to_token[:len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise ValueError("vocabulary must start with the special tokens")
        mapping = {tok: i for i, tok in enumerate(self.id_to_token)}
        if len(mapping) != len(self.id_to_token):
            raise ValueError("vocabulary tokens must be unique")
        object.__setattr__(self, "_token_to_id", MappingProxyType(mapping))

    @property
    def token_to_id(self) -> Mapping[str, int]:
        return self._token_to_id  # type: ignore[attr-defined]

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def id_of(self, token: str) -> int:
        if token in SPECIAL_TOKENS:
            return UNK_ID
        return self.token_to_id.get(token, UNK_ID)

    def header(self) -> str:
        return f"# scheme={self.scheme}"

    @property
    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.header().encode("utf-8"))
        for tok in self.id_to_token:
            h.update(b"\n")
            h.update(tok.encode("utf-8"))
        return h.hexdigest()


def build_vocabulary(docs: Iterable, scheme: TokenizerScheme, min_count: int = 1) -> Vocabulary:
    """
    Specials first, then tokens with frequency >= min_count by descending
    frequency, ties broken by token. Accepts Documents, Queries or raw strings.
    """
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")
    counts: Counter[str] = Counter()
    for item in docs:
        counts.update(tokenize(_text_of(item), scheme))
    for special in SPECIAL_TOKENS:
        counts.pop(special, None)
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocabulary(SPECIAL_TOKENS + tuple(kept), scheme)


def encode_ids(text: str, scheme: TokenizerScheme, vocab: Vocabulary) -> List[int]:
    if scheme != vocab.scheme:
        raise ValueError(f"scheme {scheme} does not match vocabulary scheme {vocab.scheme}")
    return [vocab.id_of(t) for t in tokenize(text, scheme)]


def encode_all(items: Sequence, vocab: Vocabulary) -> List[Tuple[int, ...]]:
    return [tuple(encode_ids(_text_of(it), vocab.scheme, vocab)) for it in items]


def save_vocabulary(vocab: Vocabulary, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(vocab.header() + "\n")
        for tok in vocab.id_to_token:
            f.write(tok + "\n")


def load_vocabulary(path: str | Path) -> Vocabulary:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as f:
        lines = [ln.rstrip("\n") for ln in f]
    if not lines or not lines[0].startswith("# scheme="):
        raise FormatError(path, 1, "missing '# scheme=' header")
    try:
        scheme = TokenizerScheme.parse(lines[0][len("# scheme="):])
    except ValueError as e:
        raise FormatError(path, 1, str(e)) from e
    try:
        return Vocabulary(tuple(lines[1:]), scheme)
    except ValueError as e:
        raise CheckpointError(f"{path}: {e}") from e

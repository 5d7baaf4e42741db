"""
Run configuration: defaults < config file < command-line flags.

The config file is flat `key=value`, one per line, `#` starts a comment line.
Unknown keys are errors; a close match is suggested.
"""

from __future__ import annotations

import re
from dataclasses import asdict, dataclass, fields
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Dict, Mapping, Optional, Tuple

import yaml
from rapidfuzz import fuzz, process

from errors import ConfigError
from metrics import DEFAULT_KS
from tokenizer import TokenizerScheme

try:
    from dotenv import load_dotenv
    load_dotenv()  # Load .env file if present
except ImportError:
    pass

__version__ = "0.4.0"

VARIANTS = ("bm25plus", "lms", "lms-mlm")
SCORERS = ("tfidf", "bm25", "bm25plus", "dense")

_OBJECTIVE_RE = re.compile(r"^(my_recall|recall|mrr|map|ndcg)@[1-9][0-9]*$")


@dataclass
class RunConfig:
    """Every knob a command can take. Paths are strings so the echo stays plain."""

    # inputs / outputs
    corpus: Optional[str] = None
    corpus_format: Optional[str] = None
    queries: Optional[str] = None
    eval_queries: Optional[str] = None
    qrels: Optional[str] = None
    vocab: Optional[str] = None
    index: Optional[str] = None
    checkpoint: Optional[str] = None
    pairs: Optional[str] = None
    run: Optional[str] = None
    runs: Optional[str] = None
    output_dir: str = "output"

    # tokenization
    scheme: str = "whitespace_lower"
    min_count: int = 1

    # encoder + training
    dim: int = 32
    margin: float = 0.5
    learning_rate: float = 0.1
    mlm_learning_rate: float = 0.1
    epochs: int = 10
    mlm_epochs: int = 5
    batch_size: int = 32
    mask_rate: float = 0.15
    literal_cosine_distance: bool = False
    seed: Optional[int] = None

    # pipeline
    variant: str = "lms-mlm"
    rounds: int = 2
    top_n: int = 100
    neg_per_query: int = 8
    mix_stage1: bool = False

    # retrieval
    scorer: str = "bm25plus"
    k: int = 200
    k1: float = 1.2
    b: float = 0.75
    delta: float = 1.0

    # fusion
    weights: str = "0.3,0.25,0.45"
    step: str = "0.05"
    objective: str = "recall@3"

    # evaluation
    ks: Tuple[int, ...] = DEFAULT_KS
    hit_rate: bool = False

    # execution
    jobs: int = 1
    progress: bool = False

    def validate(self) -> "RunConfig":
        _check(self.min_count >= 1, "min_count", "must be >= 1")
        _check(self.dim >= 2, "dim", "must be >= 2")
        _check(0.0 < self.margin <= 1.0, "margin", "must be in (0, 1]")
        _check(self.learning_rate > 0, "learning_rate", "must be > 0")
        _check(self.mlm_learning_rate > 0, "mlm_learning_rate", "must be > 0")
        _check(self.epochs >= 1, "epochs", "must be >= 1")
        _check(self.mlm_epochs >= 1, "mlm_epochs", "must be >= 1")
        _check(self.batch_size >= 1, "batch_size", "must be >= 1")
        _check(0.0 < self.mask_rate < 1.0, "mask_rate", "must be in (0, 1)")
        _check(self.variant in VARIANTS, "variant", f"must be one of {', '.join(VARIANTS)}")
        _check(self.rounds in (1, 2), "rounds", "must be 1 or 2")
        _check(self.top_n >= 1, "top_n", "must be >= 1")
        _check(self.neg_per_query >= 0, "neg_per_query", "must be >= 0")
        _check(self.scorer in SCORERS, "scorer", f"must be one of {', '.join(SCORERS)}")
        _check(self.k >= 1, "k", "must be >= 1")
        _check(self.k1 >= 0, "k1", "must be >= 0")
        _check(0.0 <= self.b <= 1.0, "b", "must be in [0, 1]")
        _check(self.delta >= 0, "delta", "must be >= 0")
        _check(bool(self.ks) and all(k >= 1 for k in self.ks), "ks", "must be positive integers")
        _check(self.jobs >= 1, "jobs", "must be >= 1")
        _check(self.corpus_format in (None, "jsonl", "tsv"), "corpus_format", "must be jsonl or tsv")
        _check(bool(_OBJECTIVE_RE.match(self.objective)), "objective", "must look like recall@3, mrr@10, map@10 or ndcg@10")
        try:
            TokenizerScheme.parse(self.scheme)
        except ValueError as e:
            raise ConfigError(f"scheme: {e}") from e
        step = self.step_fraction
        _check(0 < step <= 1 and (1 / step).denominator == 1, "step", "must divide 1 exactly (e.g. 0.05, 0.1, 0.5)")
        _check(sum(self.weight_fractions) == 1, "weights", "alpha + beta + theta must equal 1")
        return self

    @property
    def step_fraction(self) -> Fraction:
        try:
            return Fraction(str(self.step))
        except (ValueError, ZeroDivisionError) as e:
            raise ConfigError(f"step: {self.step!r} is not a number") from e

    @property
    def weight_fractions(self) -> Tuple[Fraction, Fraction, Fraction]:
        parts = [p.strip() for p in str(self.weights).split(",")]
        if len(parts) != 3:
            raise ConfigError(f"weights: expected alpha,beta,theta, got {self.weights!r}")
        try:
            a, b, t = (Fraction(p) for p in parts)
        except (ValueError, ZeroDivisionError) as e:
            raise ConfigError(f"weights: {self.weights!r} is not three numbers") from e
        if min(a, b, t) < 0 or max(a, b, t) > 1:
            raise ConfigError("weights: each weight must be in [0, 1]")
        return a, b, t

    def require(self, *keys: str) -> None:
        """Raise ConfigError for every listed key that is still unset."""
        missing = [k for k in keys if getattr(self, k) in (None, "")]
        if missing:
            raise ConfigError(f"missing required setting(s): {', '.join(missing)}")

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["ks"] = list(self.ks)
        return data


def _check(ok: bool, key: str, message: str) -> None:
    if not ok:
        raise ConfigError(f"{key}: {message}")


def _parse_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in {"1", "true", "yes", "on"}:
        return True
    if lowered in {"0", "false", "no", "off"}:
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _parse_ks(value: Any) -> Tuple[int, ...]:
    if isinstance(value, (list, tuple)):
        return tuple(int(v) for v in value)
    return tuple(int(v) for v in str(value).split(",") if v.strip())


def _parse_optional_int(value: Any) -> Optional[int]:
    if value is None or (isinstance(value, str) and value.strip().lower() in {"", "none"}):
        return None
    return int(value)


def _converter(name: str) -> Callable[[Any], Any]:
    default = _DEFAULTS[name]
    if name == "ks":
        return _parse_ks
    if name == "seed":
        return _parse_optional_int
    if isinstance(default, bool):
        return lambda v: v if isinstance(v, bool) else _parse_bool(str(v))
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    return lambda v: None if v is None else str(v)


_DEFAULTS: Dict[str, Any] = {f.name: getattr(RunConfig(), f.name) for f in fields(RunConfig)}
CONFIG_KEYS: Tuple[str, ...] = tuple(_DEFAULTS)


def _normalize_key(key: str) -> str:
    return key.strip().replace("-", "_")


def unknown_key_error(key: str) -> ConfigError:
    suggestion = process.extractOne(key, CONFIG_KEYS, scorer=fuzz.ratio, score_cutoff=75)
    hint = f" (did you mean {suggestion[0]!r}?)" if suggestion else ""
    return ConfigError(f"unknown config key {key!r}{hint}")


def load_config_file(path: str | Path) -> Dict[str, str]:
    """Parse a flat key=value file into raw string values."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    values: Dict[str, str] = {}
    for line_no, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{line_no}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        key = _normalize_key(key)
        if key not in _DEFAULTS:
            raise unknown_key_error(key)
        values[key] = value.strip()
    return values


def _coerce(key: str, value: Any) -> Any:
    try:
        return _converter(key)(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{key}: cannot parse {value!r} ({e})") from e


def resolve_config(
    file_values: Optional[Mapping[str, Any]] = None,
    cli_values: Optional[Mapping[str, Any]] = None,
) -> RunConfig:
    """Defaults, then file values, then non-None CLI values; validated."""
    merged: Dict[str, Any] = dict(_DEFAULTS)
    for source in (file_values or {}, {k: v for k, v in (cli_values or {}).items() if v is not None}):
        for key, value in source.items():
            key = _normalize_key(key)
            if key not in _DEFAULTS:
                raise unknown_key_error(key)
            merged[key] = _coerce(key, value)
    return RunConfig(**merged).validate()


def format_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True, default_flow_style=False).rstrip()

import sys
from pathlib import Path

import pytest
from loguru import logger

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from corpus import Document, Qrels, RunList  # noqa: E402
from synthetic import make_cluster_corpus  # noqa: E402


@pytest.fixture(autouse=True)
def _reset_logging():
    """CLI tests point loguru at captured stderr; route later tests back to the live stream."""
    yield
    logger.remove()
    logger.add(lambda message: sys.stderr.write(message), level="WARNING")


def write_lines(path: Path, lines) -> Path:
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


@pytest.fixture
def tiny_docs():
    return [
        Document("d1", "the quick brown fox"),
        Document("d2", "a lazy brown dog"),
        Document("d3", "quick quick fox jumps"),
        Document("d4", "nothing in common here"),
    ]


@pytest.fixture
def metrics_fixture():
    """Three queries with hand-worked metric values (see test_metrics)."""
    runs = [
        RunList.ranked("q1", {"d1": 0.9, "x1": 0.8, "d2": 0.7, "x2": 0.6}, tag="sys"),
        RunList.ranked("q2", {"x1": 0.9, "x2": 0.8, "d3": 0.7}, tag="sys"),
        RunList.ranked("q3", {"x1": 0.9, "x2": 0.8, "x3": 0.7, "d4": 0.6}, tag="sys"),
    ]
    qrels = Qrels({("q1", "d1"): 1, ("q1", "d2"): 2, ("q2", "d3"): 1, ("q3", "d4"): 1, ("q3", "d5"): 1})
    return runs, qrels


@pytest.fixture(scope="session")
def small_synthetic():
    return make_cluster_corpus(
        seed=3,
        topics=4,
        docs_per_topic=6,
        train_queries_per_topic=3,
        eval_queries_per_topic=2,
        doc_length=10,
    )

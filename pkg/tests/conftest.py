import numpy as np
import pytest

from polarity_stream.core_model import CleanTuple, Origin, ReferenceTable
from polarity_stream.embedding import EmbeddingModel
from polarity_stream.synthetic import CorpusConfig, SyntheticCorpus, write_yelp_csv


def make_model(words_vecs: dict, dtype=np.float64, counts=None, last_used=None) -> EmbeddingModel:
    """Model with the given input vectors. A value may be a vector or a
    (vector, context) pair; context vectors default to zero."""
    first = next(iter(words_vecs.values()))
    dim = len(first[0] if isinstance(first, tuple) else first)
    m = EmbeddingModel(dim, dtype=dtype)
    for k, (w, v) in enumerate(words_vecs.items()):
        vec, ctx = v if isinstance(v, tuple) else (v, np.zeros(dim))
        m.add_word(w, vec, ctx, (counts or {}).get(w, 1), (last_used or {}).get(w, k))
    return m


def random_model(rng: np.random.Generator, words, dim=4, dtype=np.float64) -> EmbeddingModel:
    m = EmbeddingModel(dim, dtype=dtype)
    for w in words:
        m.add_word(w, rng.normal(size=dim), rng.normal(size=dim), int(rng.integers(1, 10)), int(rng.integers(0, 100)))
    return m


def clean(seq: int, *tokens: str) -> CleanTuple:
    return CleanTuple(Origin(seq, float(seq)), tuple(tokens))


@pytest.fixture
def ref() -> ReferenceTable:
    return ReferenceTable.default()


@pytest.fixture(scope="session")
def corpus() -> SyntheticCorpus:
    return SyntheticCorpus(CorpusConfig(seed=7))


@pytest.fixture(scope="session")
def small_yelp(tmp_path_factory, corpus):
    """2,000 labelled synthetic rows in Yelp layout."""
    path = tmp_path_factory.mktemp("data") / "small.csv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        write_yelp_csv(corpus.rows(2000, seed=3), fh)
    return path


# -- acceptance summary ------------------------------------------------------

ACCEPTANCE_RESULTS: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        title, ok, detail = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {title}: {detail}")

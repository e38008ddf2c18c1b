import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polarity_stream.core_model import Polarity, ReferenceTable, TrendState
from polarity_stream.labeller import (
    CosineCounter,
    NoKnownWords,
    ReferenceIndex,
    centroid,
    cosine,
    decide,
    evidence,
    label_tokens,
    score,
    score_batch,
)

from conftest import clean, make_model, random_model

P, N = Polarity.POSITIVE, Polarity.NEGATIVE


def test_cosine_examples():
    v = np.array([0.3, -2.0, 5.0])
    assert cosine(v, v) == pytest.approx(1.0)
    assert cosine([1, 0], [0, 1]) == 0.0
    # 32 / (sqrt(14) * sqrt(77)) evaluated from exact integer parts
    dot, n1, n2 = Fraction(32), Fraction(14), Fraction(77)
    oracle = float(dot) / math.sqrt(float(n1 * n2))
    assert cosine([1, 2, 3], [4, 5, 6]) == pytest.approx(oracle, rel=1e-15)
    assert round(oracle, 6) == 0.974632


def test_cosine_degenerate_and_mismatch():
    assert cosine([0, 0], [1, 1]) == 0.0
    with pytest.raises(ValueError):
        cosine([1, 2], [1, 2, 3])


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=6), st.floats(1e-3, 1e3))
def test_cosine_bounded_and_scale_invariant(xs, lam):
    a = np.array(xs)
    b = np.roll(a, 1) + 0.5
    c = cosine(a, b)
    assert -1.0 <= c <= 1.0
    assert cosine(lam * a, b) == pytest.approx(c, abs=1e-9)


def test_centroid_examples():
    m = make_model({"a": [1, 2, 3], "b": [3, 4, 5]})
    vec, k = centroid(m, ["a", "b"])
    assert vec.tolist() == [2, 3, 4] and k == 2
    vec, k = centroid(m, ["b"])
    assert vec.tolist() == [3, 4, 5] and k == 1


def test_centroid_skips_unknown():
    m = make_model({"a": [2.0, 0.0], "b": [0.0, 4.0]})
    vec, k = centroid(m, ["a", "zzz", "b"])
    assert k == 2 and vec.tolist() == [1.0, 2.0]
    with pytest.raises(NoKnownWords):
        centroid(m, ["zzz"])


def test_centroid_of_identical_vectors_is_exact():
    v = np.array([0.1, 1 / 3, -7.25], dtype=np.float32)
    m = make_model({"a": v, "b": v, "c": v}, dtype=np.float32)
    vec, _ = centroid(m, ["a", "b", "c", "a"])
    assert np.array_equal(vec, v.astype(np.float64))


def test_centroid_updates_last_used():
    m = make_model({"a": [1.0], "b": [1.0]}, last_used={"a": 1, "b": 10})
    centroid(m, ["a", "b"], seq=5)
    assert m.last_used.tolist() == [5, 10]


def tiny_ref():
    return ReferenceTable(("p",), ("n1", "n2"))


def test_score_example():
    m = make_model({"p": [1.0, 0.0], "n1": [0.0, 1.0], "n2": [-1.0, 0.0]})
    assert score(m, np.array([1.0, 0.0]), tiny_ref()) == (1.0, -1.0)


def test_score_all_equal_and_orthogonal():
    m = make_model({"p": [1.0, 1.0], "n1": [1.0, 1.0], "n2": [1.0, 1.0]})
    assert score(m, np.array([2.0, 2.0]), tiny_ref()) == pytest.approx((1.0, 2.0))
    assert score(m, np.array([1.0, -1.0]), tiny_ref()) == pytest.approx((0.0, 0.0))


def test_score_missing_reference_words_contribute_zero():
    m = make_model({"p": [1.0, 0.0], "n1": [-1.0, 0.0]})
    refs = ReferenceIndex.build(m, tiny_ref())
    assert (refs.pos_covered, refs.neg_covered) == (1, 1)
    assert score(m, np.array([1.0, 0.0]), refs) == (1.0, -1.0)
    assert score(m, np.array([1.0, 0.0]), refs, normalize=True) == (1.0, -1.0)
    m2 = make_model({"p": [1.0, 0.0], "n1": [-1.0, 0.0], "n2": [-1.0, 0.0]})
    assert score(m2, np.array([1.0, 0.0]), tiny_ref(), normalize=True) == (1.0, -1.0)
    assert score(m2, np.array([1.0, 0.0]), tiny_ref()) == (1.0, -2.0)


def test_decide_examples():
    one = TrendState()
    assert decide(2.4, 1.1, one, 3) is P
    tied = TrendState(window_pos=1, window_neg=3)
    assert decide(1.0, 1.0, tied, 2) is N
    weighted = TrendState(wc_pos=1.3, wc_neg=1.0)
    assert decide(1.0, 1.2, weighted, 2) is P  # 1.3 > 1.2
    assert decide(1.0, 1.2, TrendState(), 2) is N


def test_decide_fallbacks():
    assert decide(0.0, 0.0, TrendState(), 0) is P  # empty window
    assert decide(5.0, 1.0, TrendState(window_neg=4), 0) is N  # no known words -> window majority
    assert decide(1.0, 1.0, TrendState(window_pos=2, window_neg=2), 1) is P  # tied window
    assert decide(1.0, 1.0, TrendState(step=0.0, window_neg=9), 1) is P  # trend detection disabled
    assert decide(1.0, 1.0, None, 1) is P


def test_evidence_is_unweighted():
    assert evidence(1.0, 2.0, 3) is N
    assert evidence(2.0, 1.0, 3) is P
    assert evidence(1.0, 1.0, 3) is None
    assert evidence(5.0, 1.0, 0) is None


def test_cost_counter_is_reference_size_regardless_of_length(ref):
    rng = np.random.default_rng(0)
    vocab = list(ref.words) + [f"w{i}" for i in range(200)]
    m = random_model(rng, vocab, dim=8)
    refs = ReferenceIndex.build(m, ref)
    for length in (1, 2, 10, 150):
        counter = CosineCounter()
        toks = list(rng.choice(vocab, length))
        label_tokens(m, toks, refs, TrendState(), counter=counter)
        assert counter.evaluations == len(ref) == 42
        counter = CosineCounter()
        score_batch(m, [clean(0, *toks)], refs, counter=counter)
        assert counter.evaluations == 42


def test_no_known_words_makes_no_cosine_calls(ref):
    m = random_model(np.random.default_rng(0), ["a"], dim=3)
    counter = CosineCounter()
    label, sp, sn, k = label_tokens(m, ["zzz"], ReferenceIndex.build(m, ref), TrendState(), counter=counter)
    assert (label, sp, sn, k) == (P, 0.0, 0.0, 0) and counter.evaluations == 0


def _fixture(ref, n=1000, seed=0):
    rng = np.random.default_rng(seed)
    vocab = list(ref.words) + [f"w{i}" for i in range(300)]
    m = random_model(rng, vocab, dim=20, dtype=np.float32)
    tuples = [clean(i, *rng.choice(vocab, int(rng.integers(1, 30)))) for i in range(n)]
    return m, tuples


def _labels(m, tuples, ref):
    refs = ReferenceIndex.build(m, ref)
    return [label_tokens(m, ct.tokens, refs, None)[0] for ct in tuples]


@pytest.mark.parametrize("lam", [0.1, 3.0, 100.0])
def test_scale_invariance(ref, lam):
    m, tuples = _fixture(ref)
    base = _labels(m, tuples, ref)
    assert _labels(m.scaled(lam), tuples, ref) == base


@given(st.integers(0, 1000), st.floats(1e-3, 1e3))
@settings(max_examples=30, deadline=None)
def test_scale_invariance_property(ref_seed, lam):
    ref = ReferenceTable.default()
    m, tuples = _fixture(ref, n=50, seed=ref_seed)
    assert _labels(m.scaled(lam), tuples, ref) == _labels(m, tuples, ref)


def test_label_is_deterministic(ref):
    m, tuples = _fixture(ref, n=100)
    assert _labels(m, tuples, ref) == _labels(m.copy(), tuples, ref)


def test_score_batch_matches_single_tuple_path(ref):
    m, tuples = _fixture(ref, n=300)
    tuples.append(clean(999, "unknownword"))
    tuples.append(clean(1000))
    refs = ReferenceIndex.build(m, ref)
    batch = score_batch(m.copy(), tuples, refs)
    for i, ct in enumerate(tuples):
        label, sp, sn, k = label_tokens(m, ct.tokens, refs, None)
        assert batch.known[i] == k
        assert batch.sum_pos[i] == pytest.approx(sp, abs=1e-9)
        assert batch.sum_neg[i] == pytest.approx(sn, abs=1e-9)
        if k:
            assert decide(batch.sum_pos[i], batch.sum_neg[i], None, k) is label


def test_score_batch_touches_last_used(ref):
    m = make_model({"a": [1.0, 0.0], "b": [0.0, 1.0], "c": [1.0, 1.0]}, last_used={"a": 0, "b": 0, "c": 50})
    score_batch(m, [clean(7, "a"), clean(9, "a", "b", "c")], ReferenceIndex.build(m, ref))
    assert m.last_used.tolist() == [9, 9, 50]

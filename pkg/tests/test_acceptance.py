"""Acceptance criteria 1-15, one test each.

Every test records a PASS/FAIL line that is printed in the terminal summary.
Criteria 9-12, 14 and 15 need public datasets on disk:

    YELP_CSV          Yelp Review Polarity train.csv ("label","text"; 1=neg, 2=pos)
    SENTIMENT140_CSV  Sentiment140 training.1600000.processed.noemoticon.csv
    SENTIWORDNET      SentiWordNet 3.0 file (for the lexicon baseline)

Without them those criteria fail with an explicit "dataset not available"
message. Criterion 13 only asks for Yelp-format input and falls back to the
synthetic Yelp-format corpus when YELP_CSV is unset.

Run standalone with ``python tests/test_acceptance.py``.
"""

import io
import os
import sys
import types
from pathlib import Path

import numpy as np
import pytest

from polarity_stream import pipeline as pipeline_mod
from polarity_stream.cli import _with, prepare_rows, run_rows
from polarity_stream.core_model import HyperParams, Polarity, ReferenceTable
from polarity_stream.embedding import EmbeddingModel, sgns_pair_step
from polarity_stream.labeller import CosineCounter, ReferenceIndex, decide, label_tokens
from polarity_stream.metrics import regen_skew
from polarity_stream.model_mgmt import merge, prune_lru
from polarity_stream.pipeline import Pipeline, RunConfig, run
from polarity_stream.synthetic import write_yelp_csv

from conftest import ACCEPTANCE_RESULTS, make_model, random_model
from test_embedding import fd_gradients, rel_err
from test_labeller import _fixture, _labels
from test_model_mgmt import as_map, random_pair

DATASET_ROWS = 100_000
SHUFFLE_SEED = 0


def record(n: int, title: str, ok: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS[n] = (title, bool(ok), detail)
    assert ok, f"criterion {n} ({title}) failed: {detail}"


def dataset(n: int, title: str, var: str) -> Path:
    path = os.environ.get(var)
    if not path or not Path(path).is_file():
        record(n, title, False, f"dataset not available (set {var}); not measured")
    return Path(path)


def desk_config(**changes) -> RunConfig:
    """Configuration used for the dataset runs: four hybrid workers, default hyperparameters."""
    base = RunConfig(format="yelp", workers=4, hp=HyperParams(seed=1))
    return _with(base, **changes) if changes else base


_ROWS_CACHE: dict = {}


def yelp_rows(n, title):
    path = dataset(n, title, "YELP_CSV")
    key = ("yelp", str(path))
    if key not in _ROWS_CACHE:
        _ROWS_CACHE[key] = prepare_rows(path, "yelp", DATASET_ROWS, SHUFFLE_SEED)
    return _ROWS_CACHE[key]


# -- property-based ----------------------------------------------------------


def test_01_sgns_gradient_check():
    worst = 0.0
    for seed in range(200):
        rng = np.random.default_rng(seed)
        vocab = int(rng.integers(2, 6))
        dim = int(rng.integers(1, 5))
        words = [f"w{i}" for i in range(vocab)]
        m = random_model(rng, words, dim=dim)
        center, context = rng.choice(vocab, 2, replace=False)
        others = [i for i in range(vocab) if i != context]
        negs = list(rng.choice(others, size=min(int(rng.integers(0, 3)), len(others)), replace=False))
        u, v = m.vectors[center].copy(), m.context_vectors[context].copy()
        nvecs = m.context_vectors[negs].copy()
        gu, gv, gn = fd_gradients(u, v, nvecs)
        alpha = 1e-3
        before_vec, before_ctx = m.vectors.copy(), m.context_vectors.copy()
        sgns_pair_step(m, words[center], words[context], [words[i] for i in negs], alpha)
        errs = [rel_err((m.vectors[center] - before_vec[center]) / -alpha, gu),
                rel_err((m.context_vectors[context] - before_ctx[context]) / -alpha, gv)]
        if negs:
            errs.append(rel_err((m.context_vectors[negs] - before_ctx[negs]) / -alpha, gn))
        worst = max(worst, *errs)
    record(1, "SGNS gradient check", worst <= 1e-4,
           f"max relative error {worst:.2e} over 200 instances (vocab<=5, d<=4)")


def test_02_merge_commutative_idempotent():
    bad_comm = bad_idem = bad_empty = 0
    for seed in range(1000):
        a, b = random_pair(seed)
        bad_comm += as_map(merge(a, b)) != as_map(merge(b, a))
        aa = merge(a, a)
        bad_idem += not (aa.words == a.words and np.array_equal(aa.vectors, a.vectors)
                         and np.array_equal(aa.context_vectors, a.context_vectors))
        bad_empty += not merge(a, EmbeddingModel(a.dim, dtype=a.dtype)).identical_to(a)
    record(2, "mean-pool merge commutativity/idempotence", bad_comm == bad_idem == bad_empty == 0,
           f"1000 pairs: {bad_comm} non-commutative, {bad_idem} non-idempotent, {bad_empty} merge(m, empty) != m")


def test_03_label_scale_invariance():
    ref = ReferenceTable.default()
    m, tuples = _fixture(ref, n=1000)
    base = _labels(m, tuples, ref)
    changed = {lam: sum(x is not y for x, y in zip(base, _labels(m.scaled(lam), tuples, ref)))
               for lam in (0.1, 3.0, 100.0)}
    record(3, "label scale invariance", all(v == 0 for v in changed.values()),
           f"changed labels per lambda on 1000 tuples: {changed}")


@pytest.fixture(scope="module")
def dirty_yelp(tmp_path_factory, small_yelp):
    """The 2,000-row fixture with 25 malformed rows spliced in."""
    lines = Path(small_yelp).read_text(encoding="utf-8").splitlines(keepends=True)
    bad = ['"7","bad label"\n', "one-column\n", '"2",""\n', '"1","a","b"\n', '"x"\n']
    out = []
    for i, line in enumerate(lines):
        out.append(line)
        if i % 80 == 0:
            out.append(bad[(i // 80) % len(bad)])
    path = tmp_path_factory.mktemp("acc") / "dirty.csv"
    path.write_text("".join(out), encoding="utf-8")
    return path, len(out), len(out) - len(lines)


def test_04_conservation(dirty_yelp):
    path, n_rows, n_bad = dirty_yelp
    failures = []
    for workers in (1, 2, 4, 8):
        for strategy in ("local", "global", "hybrid"):
            hp = HyperParams(dim=10, batch_size=200, merge_every_k=2, strategy=strategy)
            buf = io.StringIO()
            res = Pipeline(RunConfig(input=str(path), workers=workers, hp=hp), sink=buf).run()
            seqs = sorted(int(line.split(",", 1)[0].split(":")[1]) for line in buf.getvalue().splitlines())
            if not (res.inputs == n_rows and res.malformed == n_bad
                    and res.outputs == res.inputs - res.malformed == len(seqs)
                    and seqs == list(range(res.outputs))):
                failures.append((workers, strategy, res.inputs, res.malformed, res.outputs))
    record(4, "conservation outputs = inputs - malformed", not failures,
           f"12 runs over {n_rows} rows ({n_bad} malformed); mismatches: {failures or 'none'}")


def _jsonl(cfg, **kwargs):
    buf = io.StringIO()
    Pipeline(cfg, sink=buf, **kwargs).run()
    return buf.getvalue()


def test_05_determinism(small_yelp):
    cfg = RunConfig(input=str(small_yelp), clock="logical", hp=HyperParams(batch_size=500, seed=42))
    a, b = _jsonl(cfg), _jsonl(cfg)
    record(5, "single-worker determinism", a == b and a.count("\n") == 2000,
           f"two runs, {a.count(chr(10))} lines each, byte-identical={a == b} (logical clock)")


def test_06_lru_reference_words_pinned():
    ref = ReferenceTable.default()
    violations = 0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        words = list(ref.words) + [f"x{i}" for i in range(int(rng.integers(50, 300)))]
        # adversarial: reference words are the least recently used
        last = {w: (int(rng.integers(0, 10)) if w in ref.words else 1000 + i) for i, w in enumerate(words)}
        m = make_model({w: [1.0, 0.0] for w in words}, last_used=last)
        cap = int(rng.integers(len(ref.words), len(words)))
        prune_lru(m, cap, protected=ref.words)
        violations += len(m) > cap or not ref.words <= set(m.words)
    record(6, "LRU prune bound and reference pinning", violations == 0,
           f"50 adversarial fixtures, {violations} violations")


def test_07_wcd_cost_counter(small_yelp):
    ref = ReferenceTable.default()
    rng = np.random.default_rng(0)
    vocab = list(ref.words) + [f"w{i}" for i in range(500)]
    m = random_model(rng, vocab, dim=8)
    refs = ReferenceIndex.build(m, ref)
    per_length = set()
    for length in (1, 2, 5, 20, 100, 300):
        counter = CosineCounter()
        label_tokens(m, list(rng.choice(vocab, length)), refs, None, counter=counter)
        per_length.add(counter.evaluations)
    res = run(RunConfig(input=str(small_yelp), hp=HyperParams(dim=10, batch_size=200)))
    per_tuple = res.cosine_evaluations / max(res.scored_tuples, 1)
    expected = len(ref.positive) + len(ref.negative)
    record(7, "WCD cosine evaluations per tuple", per_length == {expected} and per_tuple == expected,
           f"per tuple {sorted(per_length)} across lengths 1..300, pipeline {per_tuple:g}; expected {expected}")


def test_08_ttd_step_zero_equals_no_trend(small_yelp, monkeypatch):
    def cfg(step):
        return RunConfig(input=str(small_yelp), clock="logical",
                         hp=HyperParams(dim=10, batch_size=200, tdw=50, ttd_step=step, seed=3))

    with_zero = _jsonl(cfg(0.0))
    with_ttd = _jsonl(cfg(0.05))
    # the same pipeline with the trend module cut out: raw comparison, nothing recorded
    monkeypatch.setattr(pipeline_mod, "trend", types.SimpleNamespace(record=lambda *a: None))
    monkeypatch.setattr(pipeline_mod, "decide", lambda p, n, state, k: decide(p, n, None, k))
    removed = _jsonl(cfg(0.0))
    differs = sum(a != b for a, b in zip(with_ttd.splitlines(), removed.splitlines()))
    record(8, "TTD step=0 reduces to no trend module", with_zero == removed,
           f"step=0 identical to trend-free build: {with_zero == removed}; "
           f"step=0.05 differs on {differs} of 2000 lines (control)")


# -- quantitative, dataset-driven ---------------------------------------------


@pytest.mark.dataset
def test_09_accuracy_convergence():
    title = "accuracy convergence (Yelp >= 0.70, Sentiment140 >= 0.60)"
    rows = yelp_rows(9, title)
    s140_path = dataset(9, title, "SENTIMENT140_CSV")
    s140 = prepare_rows(s140_path, "sentiment140", DATASET_ROWS, SHUFFLE_SEED)
    acc_y = run_rows(rows, desk_config()).report.window_accuracy
    acc_s = run_rows(s140, desk_config(format="sentiment140")).report.window_accuracy
    record(9, title, acc_y >= 0.70 and acc_s >= 0.60,
           f"Yelp {acc_y:.3f} over {len(rows)} tuples, Sentiment140 {acc_s:.3f} over {len(s140)} tuples")


@pytest.mark.dataset
def test_10_algorithm_ordering():
    title = "algorithm ordering WCD > lexicon > kmeans, kmeans in [0.45, 0.63]"
    rows = yelp_rows(10, title)
    lexicon = dataset(10, title, "SENTIWORDNET")
    acc = {algo: run_rows(rows, desk_config(algo=algo, lexicon=str(lexicon))).report.window_accuracy
           for algo in ("wcd", "lexicon", "kmeans")}
    ok = acc["wcd"] > acc["lexicon"] > acc["kmeans"] and 0.45 <= acc["kmeans"] <= 0.63
    record(10, title, ok, ", ".join(f"{k} {v:.3f}" for k, v in acc.items()))


@pytest.mark.dataset
def test_11_ttd_benefit_on_skew():
    title = "TTD F1 gain >= 0.005 at 87.5% positive"
    rows = yelp_rows(11, title)
    skewed = regen_skew(rows, 0.875, seed=0, label_of=lambda r: r[1])
    f1_on = run_rows(skewed, desk_config()).report.f1
    f1_off = run_rows(skewed, desk_config(ttd_step=0.0)).report.f1
    record(11, title, f1_on - f1_off >= 0.005,
           f"F1 with TTD {f1_on:.4f}, without {f1_off:.4f}, gap {f1_on - f1_off:+.4f} on {len(skewed)} tuples")


@pytest.mark.dataset
def test_12_strategy_tradeoff():
    title = "strategy trade-off at 8 workers"
    rows = yelp_rows(12, title)
    res = {s: run_rows(rows, desk_config(workers=8, strategy=s)) for s in ("local", "hybrid", "global")}
    thr = {s: r.throughput for s, r in res.items()}
    acc = {s: r.report.window_accuracy for s, r in res.items()}
    ok = (thr["local"] > thr["hybrid"] > thr["global"]
          and acc["global"] >= acc["hybrid"] >= acc["local"] - 0.02)
    record(12, title, ok, "; ".join(f"{s}: {thr[s]:.0f} t/s acc {acc[s]:.3f}" for s in res))


@pytest.mark.slow
def test_13_throughput_floor(tmp_path, corpus):
    title = "throughput >= 5000 tuples/s, wcd, 8 workers, hybrid"
    path = os.environ.get("YELP_CSV")
    source = "Yelp"
    if not path or not Path(path).is_file():
        path = tmp_path / "synthetic_yelp.csv"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            write_yelp_csv(corpus.rows(40_000, seed=11), fh)
        source = "synthetic Yelp-format"
    res = run(RunConfig(input=str(path), algo="wcd", workers=8, hp=HyperParams(strategy="hybrid")))
    record(13, title, res.throughput >= 5000,
           f"{res.throughput:.0f} tuples/s on {res.outputs} {source} tuples, {os.cpu_count()} CPU core(s) available")


@pytest.mark.dataset
def test_14_batch_size_sweep():
    title = "throughput peaks at b=2000 (vs 200 and 5000)"
    rows = yelp_rows(14, title)
    thr = {b: run_rows(rows, desk_config(batch_size=b)).throughput for b in (200, 2000, 5000)}
    record(14, title, thr[2000] > thr[200] and thr[2000] > thr[5000],
           ", ".join(f"b={b}: {t:.0f} t/s" for b, t in thr.items()))


@pytest.mark.dataset
def test_15_dimension_sweep():
    title = "dimension sweep accuracy/throughput"
    rows = yelp_rows(15, title)
    dims = (10, 20, 50, 100, 500)
    res = {d: run_rows(rows, desk_config(dim=d)) for d in dims}
    acc = {d: r.report.window_accuracy for d, r in res.items()}
    thr = {d: r.throughput for d, r in res.items()}
    decreasing = all(thr[a] > thr[b] for a, b in zip(dims[1:], dims[2:]))
    ok = acc[20] >= acc[10] and acc[500] <= acc[20] + 0.01 and decreasing
    record(15, title, ok, "; ".join(f"d={d}: acc {acc[d]:.3f}, {thr[d]:.0f} t/s" for d in dims))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-p", "no:cacheprovider"]))

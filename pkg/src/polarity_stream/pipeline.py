"""Threaded operator chain: source -> preprocess/batch -> workers (train + label) -> sink.

Stages talk over bounded queues, so a slow stage blocks its producer instead
of buffering the stream. Tuples are partitioned round-robin by ``seq``; each
worker owns its batcher, model (unless the strategy is global) and trend state.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import queue
import socket
import sys
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Optional, TextIO

import numpy as np

from . import baselines, trend
from .embedding import EmbeddingModel, encode_batch, observe_vocab, train_batch
from .labeller import CosineCounter, ReferenceIndex, decide, evidence, score_batch
from .metrics import MetricsReport, MetricsTracker, write_report
from .model_mgmt import MergeTrigger, ModelStore, SyncBaseline, merge, prune_lru, sync
from .preprocess import Batch, Batcher, tokenize_and_filter
from .core_model import (
    HyperParams,
    LabelledTuple,
    Polarity,
    ReferenceTable,
    Strategy,
    StreamTuple,
    load_stopwords,
)

log = logging.getLogger(__name__)

FORMATS = ("sentiment140", "yelp", "plain")
ALGOS = ("wcd", "lexicon", "kmeans")

_STOP = object()


class SourceError(Exception):
    """The input could not be read."""


# -- sources ---------------------------------------------------------------


@dataclass
class SourceStats:
    rows: int = 0
    malformed: int = 0


def parse_row(fields: list[str], fmt: str) -> tuple[str, Optional[Polarity]]:
    """Map one CSV row to (text, true label); raises ValueError if malformed."""
    if fmt == "sentiment140":
        if len(fields) != 6:
            raise ValueError(f"expected 6 columns, got {len(fields)}")
        polarity = fields[0].strip()
        labels = {"0": Polarity.NEGATIVE, "4": Polarity.POSITIVE}
        if polarity not in labels:
            raise ValueError(f"unsupported polarity {polarity!r}")
        text, label = fields[5], labels[polarity]
    elif fmt == "yelp":
        if len(fields) != 2:
            raise ValueError(f"expected 2 columns, got {len(fields)}")
        labels = {"1": Polarity.NEGATIVE, "2": Polarity.POSITIVE}
        if fields[0].strip() not in labels:
            raise ValueError(f"unsupported label {fields[0]!r}")
        text, label = fields[1].replace("\\n", " ").replace('\\"', '"'), labels[fields[0].strip()]
    elif fmt == "plain":
        text, label = fields[0] if fields else "", None
    else:
        raise ValueError(f"unknown format {fmt!r}")
    if not text.strip():
        raise ValueError("empty text")
    return text, label


def read_rows(fh: TextIO, fmt: str, stats: SourceStats) -> Iterator[tuple[str, Optional[Polarity]]]:
    """Parse rows, counting and skipping malformed ones."""
    if fmt == "plain":
        lines = ([line.rstrip("\r\n")] for line in fh)
    else:
        lines = _csv_rows(fh, stats)
    for fields in lines:
        stats.rows += 1
        try:
            yield parse_row(fields, fmt)
        except ValueError as exc:
            stats.malformed += 1
            log.debug("skipping row %d: %s", stats.rows, exc)


def _csv_rows(fh: TextIO, stats: SourceStats) -> Iterator[list[str]]:
    reader = csv.reader(fh)
    while True:
        try:
            yield next(reader)
        except StopIteration:
            return
        except csv.Error as exc:
            stats.rows += 1
            stats.malformed += 1
            log.debug("skipping unparsable row: %s", exc)


class Clock:
    """Timestamps in milliseconds. The logical clock stamps tuples with their
    seq so that outputs are reproducible byte for byte."""

    def __init__(self, mode: str = "wall"):
        if mode not in ("wall", "logical"):
            raise ValueError(f"unknown clock {mode!r}")
        self.mode = mode

    def ingest(self, seq: int) -> float:
        return float(seq) if self.mode == "logical" else time.time() * 1000.0

    def emit(self, seq: int) -> float:
        return float(seq) if self.mode == "logical" else time.time() * 1000.0


def replay_source(
    path: str | Path,
    fmt: str,
    rate: float | str = "max",
    stats: Optional[SourceStats] = None,
    clock: Optional[Clock] = None,
    stop: Optional[threading.Event] = None,
) -> Iterator[StreamTuple]:
    """Replay a dataset file as a stream, optionally paced to ``rate`` tuples/s."""
    stats = stats if stats is not None else SourceStats()
    clock = clock or Clock()
    pace = None if rate in ("max", None) else float(rate)
    try:
        fh = open(path, encoding="utf-8", errors="replace", newline="")
    except OSError as exc:
        raise SourceError(f"cannot open {path}: {exc}") from exc
    with fh:
        start = time.monotonic()
        seq = 0
        for text, label in read_rows(fh, fmt, stats):
            if stop is not None and stop.is_set():
                return
            if pace:
                delay = start + seq / pace - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
            yield StreamTuple(seq=seq, ts=clock.ingest(seq), text=text, true_label=label)
            seq += 1


def socket_source(
    port: int,
    host: str = "0.0.0.0",
    clock: Optional[Clock] = None,
    stop: Optional[threading.Event] = None,
    ready: Optional[Callable[[int], None]] = None,
    stats: Optional[SourceStats] = None,
) -> Iterator[StreamTuple]:
    """Accept TCP connections one after another; each newline-terminated line is a tuple.

    Ends when ``stop`` is set. ``ready`` receives the bound port (useful with port 0).
    """
    clock = clock or Clock()
    stats = stats if stats is not None else SourceStats()
    stop = stop or threading.Event()
    seq = 0
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as srv:
        srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        srv.bind((host, port))
        srv.listen()
        srv.settimeout(0.2)
        if ready is not None:
            ready(srv.getsockname()[1])
        while not stop.is_set():
            try:
                conn, _ = srv.accept()
            except socket.timeout:
                continue
            with conn, conn.makefile("r", encoding="utf-8", errors="replace") as lines:
                for line in lines:
                    stats.rows += 1
                    text = line.rstrip("\r\n")
                    if not text.strip():
                        stats.malformed += 1
                        continue
                    yield StreamTuple(seq=seq, ts=clock.ingest(seq), text=text)
                    seq += 1
                    if stop.is_set():
                        return


def partition(stream: Iterable[StreamTuple], n_workers: int) -> list[list[StreamTuple]]:
    """Round-robin by seq (materialized; the runtime partitions on the fly)."""
    parts: list[list[StreamTuple]] = [[] for _ in range(n_workers)]
    for t in stream:
        parts[t.seq % n_workers].append(t)
    return parts


# -- configuration ---------------------------------------------------------


@dataclass
class RunConfig:
    input: str = "-"
    format: str = "yelp"
    algo: str = "wcd"
    workers: int = 1
    hp: HyperParams = field(default_factory=HyperParams)
    rate: float | str = "max"
    out: Optional[str] = None
    metrics_out: Optional[str] = None
    reference: Optional[str] = None
    stopwords: Optional[str] = None
    lexicon: Optional[str] = None
    clock: str = "wall"
    queue_capacity: int = 8
    report_interval: float = 5.0
    kmeans_calibration: int = 500
    restore: Optional[str] = None
    save_model: Optional[str] = None

    def __post_init__(self):
        if self.format not in FORMATS:
            raise ValueError(f"format must be one of {FORMATS}")
        if self.algo not in ALGOS:
            raise ValueError(f"algo must be one of {ALGOS}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.algo == "lexicon" and not self.lexicon:
            raise ValueError("--algo lexicon needs --lexicon")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hp"] = self.hp.to_dict()
        return d


@dataclass
class RunResult:
    inputs: int
    outputs: int
    malformed: int
    elapsed_s: float
    report: MetricsReport
    model: Optional[EmbeddingModel]
    cosine_evaluations: int = 0
    scored_tuples: int = 0
    losses: list = field(default_factory=list)

    @property
    def throughput(self) -> float:
        return self.outputs / self.elapsed_s if self.elapsed_s > 0 else 0.0


# -- workers ---------------------------------------------------------------


class Worker:
    """Train-then-label loop for one partition."""

    def __init__(self, wid: int, cfg: RunConfig, store: ModelStore, ref: ReferenceTable,
                 lexicon: Optional[dict], clock: Clock, initial: Optional[EmbeddingModel] = None):
        hp = cfg.hp
        self.wid = wid
        self.cfg = cfg
        self.hp = hp
        self.store = store
        self.ref = ref
        self.protected = ref.words
        self.lexicon = lexicon
        self.clock = clock
        self.trend = hp.trend_state()
        self.model = initial.copy() if initial is not None else EmbeddingModel(hp.dim)
        self.baseline = SyncBaseline()
        # under the logical clock, merge periods are measured in stream time (seq / 1000 s)
        self._stream_now = 0.0
        trigger_clock = (lambda: self._stream_now) if clock.mode == "logical" else time.monotonic
        self.trigger = MergeTrigger(period=hp.merge_period, every_k=hp.merge_every_k, clock=trigger_clock)
        self.kmeans = baselines.TwoMeans(calibration=cfg.kmeans_calibration)
        self.counter = CosineCounter()
        self.batches = 0
        self.losses: list[float] = []

    def _seed(self) -> int:
        ss = np.random.SeedSequence([self.hp.seed, self.wid, self.batches])
        return int(ss.generate_state(1, dtype=np.uint64)[0])

    def process(self, batch: Batch) -> list[LabelledTuple]:
        if self.store.strategy is Strategy.GLOBAL:
            with self.store.lock:
                out = self._step(self.store.shared, batch)
        else:
            out = self._step(self.model, batch)
        self.batches += 1
        if batch.tuples:
            self._stream_now = batch.tuples[-1].origin.seq / 1000.0
        if self.trigger.tick():
            self.on_trigger()
        return out

    def on_trigger(self) -> None:
        if self.store.strategy is Strategy.HYBRID:
            self.model, self.baseline = sync(self.model, self.store, self.baseline)
        if self.store.strategy is Strategy.GLOBAL:
            with self.store.lock:
                self.store.shared.refresh_negative_table()
        else:
            self.model.refresh_negative_table()

    def _step(self, model: EmbeddingModel, batch: Batch) -> list[LabelledTuple]:
        hp = self.hp
        encoded = None
        if self.cfg.algo != "lexicon":
            seed = self._seed()
            encoded = encode_batch(model, batch)
            observe_vocab(model, batch, hp.min_word_count, np.random.default_rng(seed), encoded=encoded)
            self.losses.append(train_batch(model, batch, hp, seed, encoded=encoded))
        out = self._label(model, batch, encoded)
        if hp.lru_cap is not None and len(model) > hp.lru_cap:
            prune_lru(model, hp.lru_cap, self.protected)
        return out

    def _label(self, model: EmbeddingModel, batch: Batch, encoded=None) -> list[LabelledTuple]:
        algo = self.cfg.algo
        tuples = batch.tuples
        emit = self.clock.emit
        if algo == "lexicon":
            out = []
            for ct in tuples:
                total = baselines.lexicon_score(ct.tokens, self.lexicon)
                label = Polarity.NEGATIVE if total < 0 else Polarity.POSITIVE
                known = sum(1 for t in ct.tokens if t in self.lexicon)
                out.append(LabelledTuple(ct.origin, label, max(total, 0.0), max(-total, 0.0), known,
                                         emit(ct.origin.seq)))
            return out
        refs = ReferenceIndex.build(model, self.ref)
        normalize = self.hp.normalize_reference_sums if algo == "wcd" else False
        scores = score_batch(model, tuples, refs, normalize=normalize, counter=self.counter, encoded=encoded)
        sum_pos = scores.sum_pos.tolist()
        sum_neg = scores.sum_neg.tolist()
        known = scores.known.tolist()
        out = []
        for i, ct in enumerate(tuples):
            p, n, k = sum_pos[i], sum_neg[i], known[i]
            if algo == "wcd":
                label = decide(p, n, self.trend, k)
                raw = evidence(p, n, k)
                if raw is not None:
                    trend.record(self.trend, raw)
            elif k == 0:
                label = Polarity.POSITIVE
            else:
                label, _ = self.kmeans.label(scores.centroids[i], p)
            out.append(LabelledTuple(ct.origin, label, p, n, k, emit(ct.origin.seq)))
        return out


# -- runtime ---------------------------------------------------------------


class Pipeline:
    def __init__(self, cfg: RunConfig, source: Optional[Iterable[StreamTuple]] = None,
                 sink: Optional[TextIO] = None, metrics_sink: Optional[TextIO] = None):
        self.cfg = cfg
        self.clock = Clock(cfg.clock)
        self.stats = SourceStats()
        self.stop = threading.Event()
        self._source = source
        self._sink = sink
        self._metrics_sink = metrics_sink
        self.stopwords = load_stopwords(cfg.stopwords)
        self.ref = ReferenceTable.load(cfg.reference) if cfg.reference else ReferenceTable.default()
        self.lexicon = baselines.load_lexicon(cfg.lexicon) if cfg.lexicon else None
        self.truths: dict[int, Optional[Polarity]] = {}
        self.errors: list[BaseException] = []

    def source(self) -> Iterable[StreamTuple]:
        if self._source is not None:
            return self._source
        target = self.cfg.input
        if target.startswith("tcp://"):
            port = int(target.rsplit(":", 1)[1])
            return socket_source(port, clock=self.clock, stop=self.stop, stats=self.stats)
        return replay_source(target, self.cfg.format, self.cfg.rate, self.stats, self.clock, self.stop)

    def _ingest(self, raw_q: queue.Queue) -> None:
        try:
            for tup in self.source():
                if self._source is not None:
                    self.stats.rows += 1
                    if not tup.text.strip():
                        self.stats.malformed += 1
                        continue
                raw_q.put(tup)
                if self.stop.is_set():
                    break
        except BaseException as exc:  # surfaced by run()
            self.errors.append(exc)
            self.stop.set()
        finally:
            raw_q.put(_STOP)

    def _preprocess(self, raw_q: queue.Queue, work_qs: list[queue.Queue]) -> None:
        n = len(work_qs)
        hp = self.cfg.hp
        # the logical clock closes batches on size only, so batch boundaries are reproducible
        timeout = hp.batch_timeout if self.clock.mode == "wall" else math.inf
        batchers = [Batcher(hp.batch_size, timeout) for _ in range(n)]
        try:
            while True:
                waits = [r for r in (b.remaining() for b in batchers) if r is not None and math.isfinite(r)]
                try:
                    item = raw_q.get(timeout=min(waits) if waits else None)
                except queue.Empty:
                    item = None
                if item is _STOP:
                    break
                if item is not None:
                    self.truths[item.seq] = item.true_label
                    k = item.seq % n
                    full = batchers[k].add(tokenize_and_filter(item, self.stopwords))
                    if full is not None:
                        work_qs[k].put(full)
                for k, b in enumerate(batchers):
                    expired = b.poll()
                    if expired is not None:
                        work_qs[k].put(expired)
            for k, b in enumerate(batchers):
                tail = b.flush()
                if tail is not None:
                    work_qs[k].put(tail)
        except BaseException as exc:
            self.errors.append(exc)
            self.stop.set()
        finally:
            for q in work_qs:
                q.put(_STOP)

    def _work(self, worker: Worker, in_q: queue.Queue, out_q: queue.Queue) -> None:
        try:
            while True:
                item = in_q.get()
                if item is _STOP:
                    break
                out_q.put(worker.process(item))
        except BaseException as exc:
            self.errors.append(exc)
            self.stop.set()
            # keep draining so upstream never blocks on a dead worker
            while in_q.get() is not _STOP:
                pass
        finally:
            out_q.put(_STOP)

    def run(self) -> RunResult:
        cfg = self.cfg
        initial = EmbeddingModel.load(cfg.restore) if cfg.restore else None
        store = ModelStore(cfg.hp.strategy, cfg.hp.dim, cfg.hp.pooling)
        if initial is not None and store.backend is not None:
            store.backend.model = initial.copy()
        workers = [Worker(i, cfg, store, self.ref, self.lexicon, self.clock, initial) for i in range(cfg.workers)]
        raw_q: queue.Queue = queue.Queue(maxsize=cfg.queue_capacity * max(cfg.hp.batch_size, 1))
        work_qs = [queue.Queue(maxsize=cfg.queue_capacity) for _ in workers]
        out_q: queue.Queue = queue.Queue(maxsize=cfg.queue_capacity * len(workers))

        threads = [threading.Thread(target=self._ingest, args=(raw_q,), name="source", daemon=True),
                   threading.Thread(target=self._preprocess, args=(raw_q, work_qs), name="preprocess", daemon=True)]
        threads += [threading.Thread(target=self._work, args=(w, q, out_q), name=f"worker-{w.wid}", daemon=True)
                    for w, q in zip(workers, work_qs)]

        own_sink = own_metrics = None
        sink = self._sink
        if sink is None and cfg.out:
            sink = own_sink = open(cfg.out, "w", encoding="utf-8")
        metrics_sink = self._metrics_sink
        if metrics_sink is None and cfg.metrics_out:
            metrics_sink = own_metrics = open(cfg.metrics_out, "w", encoding="utf-8")

        tracker = MetricsTracker()
        outputs = 0
        start = time.monotonic()
        next_report = start + cfg.report_interval
        try:
            for t in threads:
                t.start()
            done = 0
            while done < len(workers):
                item = out_q.get()
                if item is _STOP:
                    done += 1
                    continue
                for lt in item:
                    truth = self.truths.pop(lt.origin.seq, None)
                    tracker.add(lt, truth)
                    outputs += 1
                    if sink is not None:
                        rec = lt.to_dict()
                        if truth is not None:
                            rec["true_label"] = truth.value
                        sink.write(json.dumps(rec) + "\n")
                if metrics_sink is not None and time.monotonic() >= next_report:
                    next_report += cfg.report_interval
                    write_report(tracker.report(), metrics_sink)
            for t in threads:
                t.join()
        except KeyboardInterrupt:
            self.stop.set()
            raise
        finally:
            elapsed = time.monotonic() - start
            report = tracker.report()
            if metrics_sink is not None:
                write_report(report, metrics_sink)
            if sink is not None:
                sink.flush()
            for fh in (own_sink, own_metrics):
                if fh is not None:
                    fh.close()
        if self.errors:
            raise self.errors[0]

        model = self._final_model(workers, store)
        if cfg.save_model and model is not None:
            model.save(cfg.save_model)
        return RunResult(
            inputs=self.stats.rows,
            outputs=outputs,
            malformed=self.stats.malformed,
            elapsed_s=elapsed,
            report=report,
            model=model,
            cosine_evaluations=sum(w.counter.evaluations for w in workers),
            scored_tuples=sum(w.counter.calls for w in workers),
            losses=[l for w in workers for l in w.losses],
        )

    def _final_model(self, workers: list[Worker], store: ModelStore) -> Optional[EmbeddingModel]:
        if self.cfg.algo == "lexicon":
            return None
        if store.strategy is Strategy.GLOBAL:
            return store.snapshot()
        if store.strategy is Strategy.HYBRID:
            for w in workers:
                w.model, w.baseline = sync(w.model, store, w.baseline)
            return store.snapshot()
        model = workers[0].model
        for w in workers[1:]:
            model = merge(model, w.model, self.cfg.hp.pooling)
        return model


def run(cfg: RunConfig, **kwargs) -> RunResult:
    return Pipeline(cfg, **kwargs).run()

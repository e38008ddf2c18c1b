"""Throughput, p95 latency, accuracy and F1 tracking; skew/length dataset regeneration."""

from __future__ import annotations

import csv
import json
import math
import time
from collections import deque
from dataclasses import asdict, dataclass
from typing import Callable, Iterable, Iterator, Optional, Sequence, TextIO

import numpy as np

from .core_model import LabelledTuple, Polarity


class LatencyHistogram:
    """Fixed-width buckets from 0 to ``max_ms``; larger values land in an overflow bucket."""

    def __init__(self, bucket_ms: float = 0.1, max_ms: float = 10_000.0):
        self.bucket_ms = bucket_ms
        self.max_ms = max_ms
        self.n_buckets = int(round(max_ms / bucket_ms))
        self.counts = np.zeros(self.n_buckets + 1, dtype=np.int64)
        self.total = 0

    def add(self, latency_ms: float) -> None:
        k = int(latency_ms / self.bucket_ms) if latency_ms > 0 else 0
        self.counts[min(k, self.n_buckets)] += 1
        self.total += 1

    def quantile(self, q: float) -> Optional[float]:
        """Upper edge of the bucket holding the q-th ranked sample (error < one bucket)."""
        if self.total == 0:
            return None
        rank = max(1, math.ceil(q * self.total))
        k = int(np.searchsorted(np.cumsum(self.counts), rank))
        if k >= self.n_buckets:
            return math.inf
        return (k + 1) * self.bucket_ms


@dataclass
class Confusion:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def add(self, predicted: Polarity, truth: Polarity) -> None:
        if predicted is Polarity.POSITIVE:
            if truth is Polarity.POSITIVE:
                self.tp += 1
            else:
                self.fp += 1
        elif truth is Polarity.POSITIVE:
            self.fn += 1
        else:
            self.tn += 1

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def accuracy(self) -> Optional[float]:
        return (self.tp + self.tn) / self.total if self.total else None

    @property
    def precision(self) -> Optional[float]:
        d = self.tp + self.fp
        return self.tp / d if d else None

    @property
    def recall(self) -> Optional[float]:
        d = self.tp + self.fn
        return self.tp / d if d else None

    @property
    def f1(self) -> Optional[float]:
        d = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / d if d else None


@dataclass
class MetricsReport:
    processed: int
    elapsed_s: float
    throughput: float
    interval_throughput: float
    p95_latency_ms: Optional[float]
    latency_bucket_ms: float
    labelled: int
    accuracy: Optional[float] = None
    window_accuracy: Optional[float] = None
    precision: Optional[float] = None
    recall: Optional[float] = None
    f1: Optional[float] = None
    positive_rate: Optional[float] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.labelled == 0:
            for key in ("accuracy", "window_accuracy", "precision", "recall", "f1"):
                d.pop(key)
        return d


class MetricsTracker:
    """Aggregates labelled tuples into reports.

    Latency is ``emit_ts - ts`` of each tuple (milliseconds). Tuples may
    arrive in any order; every statistic here is order-independent except the
    sliding window accuracy, which follows arrival order.
    """

    def __init__(self, window: int = 10_000, bucket_ms: float = 0.1, clock: Callable[[], float] = time.monotonic):
        self.clock = clock
        self.hist = LatencyHistogram(bucket_ms)
        self.confusion = Confusion()
        self.recent: deque[bool] = deque(maxlen=window)
        self._recent_correct = 0
        self.processed = 0
        self.positives = 0
        self.start: Optional[float] = None
        self._last_time: Optional[float] = None
        self._last_count = 0

    def add(self, lt: LabelledTuple, truth: Optional[Polarity] = None) -> None:
        if self.start is None:
            self.start = self._last_time = self.clock()
        self.processed += 1
        if lt.label is Polarity.POSITIVE:
            self.positives += 1
        self.hist.add(lt.emit_ts - lt.origin.ts)
        if truth is not None:
            self.confusion.add(lt.label, truth)
            ok = lt.label is truth
            if len(self.recent) == self.recent.maxlen:
                self._recent_correct -= self.recent[0]
            self.recent.append(ok)
            self._recent_correct += ok

    def report(self) -> MetricsReport:
        now = self.clock()
        start = self.start if self.start is not None else now
        elapsed = now - start
        last = self._last_time if self._last_time is not None else now
        interval = now - last
        interval_n = self.processed - self._last_count
        self._last_time, self._last_count = now, self.processed
        c = self.confusion
        return MetricsReport(
            processed=self.processed,
            elapsed_s=elapsed,
            throughput=self.processed / elapsed if elapsed > 0 else 0.0,
            interval_throughput=interval_n / interval if interval > 0 else 0.0,
            p95_latency_ms=self.hist.quantile(0.95),
            latency_bucket_ms=self.hist.bucket_ms,
            labelled=c.total,
            accuracy=c.accuracy,
            window_accuracy=self._recent_correct / len(self.recent) if self.recent else None,
            precision=c.precision,
            recall=c.recall,
            f1=c.f1,
            positive_rate=self.positives / self.processed if self.processed else None,
        )


def track(
    stream: Iterable[tuple[LabelledTuple, Optional[Polarity]]],
    interval: float = 5.0,
    tracker: Optional[MetricsTracker] = None,
) -> Iterator[MetricsReport]:
    """Yield a report every ``interval`` seconds and a final one at end of stream."""
    tracker = tracker or MetricsTracker()
    next_at = tracker.clock() + interval
    for lt, truth in stream:
        tracker.add(lt, truth)
        if tracker.clock() >= next_at:
            next_at += interval
            yield tracker.report()
    yield tracker.report()


def write_report(report: MetricsReport, fh: TextIO) -> None:
    fh.write(json.dumps(report.to_dict()) + "\n")
    fh.flush()


def write_summary_csv(rows: Sequence[dict], fh: TextIO) -> None:
    fieldnames: list[str] = []
    for r in rows:
        fieldnames.extend(k for k in r if k not in fieldnames)
    w = csv.DictWriter(fh, fieldnames=fieldnames)
    w.writeheader()
    w.writerows(rows)


def regen_skew(
    rows: Sequence,
    pos_fraction: float,
    seed: int = 0,
    label_of: Callable = lambda r: r.true_label,
) -> list:
    """Largest subset (drawn without replacement) whose positive share is ``pos_fraction``, shuffled."""
    if not 0.0 <= pos_fraction <= 1.0:
        raise ValueError("pos_fraction must be in [0, 1]")
    pos = [r for r in rows if label_of(r) is Polarity.POSITIVE]
    neg = [r for r in rows if label_of(r) is Polarity.NEGATIVE]
    if pos_fraction == 0.0:
        n_pos, n_neg = 0, len(neg)
    elif pos_fraction == 1.0:
        n_pos, n_neg = len(pos), 0
    else:
        total = min(len(pos) / pos_fraction, len(neg) / (1.0 - pos_fraction))
        n_pos = min(len(pos), int(round(total * pos_fraction)))
        n_neg = min(len(neg), int(round(total * (1.0 - pos_fraction))))
    rng = np.random.default_rng(seed)
    chosen = [pos[i] for i in rng.choice(len(pos), n_pos, replace=False)] if n_pos else []
    chosen += [neg[i] for i in rng.choice(len(neg), n_neg, replace=False)] if n_neg else []
    order = rng.permutation(len(chosen))
    return [chosen[i] for i in order]


DEFAULT_LENGTH_BOUNDS = (30, 100, 300)


def regen_by_length(
    rows: Sequence,
    token_count: Callable,
    bounds: Sequence[int] = DEFAULT_LENGTH_BOUNDS,
) -> list[list]:
    """Split rows by post-filter token count; a count equal to a bound goes to the lower bucket.

    With the default bounds the buckets are <=30, 31-100, 101-300 and >300.
    """
    buckets: list[list] = [[] for _ in range(len(bounds) + 1)]
    for r in rows:
        n = token_count(r)
        k = int(np.searchsorted(bounds, n, side="left"))
        buckets[k].append(r)
    return buckets

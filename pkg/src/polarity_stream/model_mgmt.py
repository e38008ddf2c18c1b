"""Local / global / hybrid model management, pooled merging and LRU pruning."""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Protocol

import numpy as np

from .embedding import EmbeddingModel
from .core_model import Pooling, Strategy

log = logging.getLogger(__name__)

_POOL = {
    Pooling.MEAN: lambda x, y: (x + y) / x.dtype.type(2),
    Pooling.MIN: np.minimum,
    Pooling.MAX: np.maximum,
}


def merge(a: EmbeddingModel, b: EmbeddingModel, pooling: Pooling = Pooling.MEAN) -> EmbeddingModel:
    """Union of two vocabularies.

    Shared words get their vectors and context vectors pooled componentwise,
    their counts summed and the later ``last_used``. Words known to one side
    only are copied through unchanged.
    """
    if a.dim != b.dim:
        raise ValueError(f"cannot merge models of dim {a.dim} and {b.dim}")
    pool = _POOL[Pooling(pooling)]
    out = a.copy()
    out._neg_table = None
    out.total_tokens = a.total_tokens + b.total_tokens

    b_words = b.words
    in_a = np.fromiter((w in a.index for w in b_words), dtype=bool, count=len(b_words))
    b_rows_shared = np.flatnonzero(in_a)
    if len(b_rows_shared):
        a_rows = np.fromiter((a.index[b_words[r]] for r in b_rows_shared), dtype=np.int64, count=len(b_rows_shared))
        out._vec[a_rows] = pool(a._vec[a_rows], b._vec[b_rows_shared])
        out._ctx[a_rows] = pool(a._ctx[a_rows], b._ctx[b_rows_shared])
        out._counts[a_rows] = a._counts[a_rows] + b._counts[b_rows_shared]
        out._last_used[a_rows] = np.maximum(a._last_used[a_rows], b._last_used[b_rows_shared])

    new_rows = np.flatnonzero(~in_a)
    if len(new_rows):
        start = len(out.words)
        out._reserve(start + len(new_rows))
        stop = start + len(new_rows)
        out._vec[start:stop] = b._vec[new_rows]
        out._ctx[start:stop] = b._ctx[new_rows]
        out._counts[start:stop] = np.maximum(b._counts[new_rows], 1)
        out._last_used[start:stop] = b._last_used[new_rows]
        for k, r in enumerate(new_rows):
            w = b_words[r]
            out.index[w] = start + k
            out.words.append(w)

    for w, c in b.pending.items():
        i = out.index.get(w)
        if i is not None:
            out._counts[i] += c
            continue
        out.pending[w] = out.pending.get(w, 0) + c
        out.pending_last[w] = max(out.pending_last.get(w, 0), b.pending_last.get(w, 0))
    for w in [w for w in out.pending if w in out.index]:
        out._counts[out.index[w]] += out.pending.pop(w)
        out.pending_last.pop(w, None)
    return out


def prune_lru(model: EmbeddingModel, cap: int, protected: Iterable[str] = ()) -> int:
    """Evict least-recently-used words until at most ``cap`` remain.

    Protected (reference) words are never evicted. Returns the number of
    vocabulary entries removed. Sub-threshold pending counts are trimmed to
    the same cap.
    """
    if cap < 1:
        raise ValueError("cap must be >= 1")
    if len(model.pending) > cap:
        keep = sorted(model.pending, key=lambda w: model.pending_last.get(w, 0), reverse=True)[:cap]
        model.pending = {w: model.pending[w] for w in keep}
        model.pending_last = {w: model.pending_last[w] for w in keep}
    n = len(model)
    excess = n - cap
    if excess <= 0:
        return 0
    pinned = np.zeros(n, dtype=bool)
    for w in protected:
        i = model.index.get(w)
        if i is not None:
            pinned[i] = True
    candidates = np.flatnonzero(~pinned)
    order = candidates[np.argsort(model.last_used[candidates], kind="stable")]
    evict = order[:excess]
    keep = np.ones(n, dtype=bool)
    keep[evict] = False
    model.keep_rows(keep)
    return len(evict)


@dataclass
class MergeTrigger:
    """Fires every ``every_k`` batches, or every ``period`` seconds of wall clock."""

    period: Optional[float] = 30.0
    every_k: Optional[int] = None
    clock: Callable[[], float] = time.monotonic
    _batches: int = 0
    _last: float = field(default=0.0)

    def __post_init__(self):
        if self.every_k is None and self.period is None:
            raise ValueError("need a period or a batch count")
        self._last = self.clock()

    def tick(self) -> bool:
        """Record one finished batch; True if a merge is due."""
        self._batches += 1
        if self.every_k is not None:
            return self._batches % self.every_k == 0
        now = self.clock()
        if now - self._last >= self.period:
            self._last = now
            return True
        return False


class SharedModelBackend(Protocol):
    """What a shared-model store must provide (an external KVS could implement this)."""

    def merge_in(self, model: EmbeddingModel, pooling: Pooling) -> EmbeddingModel: ...

    def snapshot(self) -> EmbeddingModel: ...


class InProcessBackend:
    """Shared model held in this process, guarded by a lock."""

    def __init__(self, dim: int, model: Optional[EmbeddingModel] = None):
        self.model = model if model is not None else EmbeddingModel(dim)
        self.lock = threading.RLock()
        self.merges = 0

    def merge_in(self, model: EmbeddingModel, pooling: Pooling) -> EmbeddingModel:
        with self.lock:
            if len(self.model) == 0 and not self.model.pending:
                merged = model.copy()
            else:
                merged = merge(self.model, model, pooling)
            self.model = merged
            self.merges += 1
            return merged.copy()

    def snapshot(self) -> EmbeddingModel:
        with self.lock:
            return self.model.copy()


class ModelStore:
    def __init__(self, strategy: Strategy, dim: int, pooling: Pooling = Pooling.MEAN,
                 backend: Optional[InProcessBackend] = None):
        self.strategy = Strategy(strategy)
        self.pooling = Pooling(pooling)
        self.dim = dim
        if self.strategy is Strategy.LOCAL:
            self.backend = None
        else:
            self.backend = backend if backend is not None else InProcessBackend(dim)

    @property
    def shared(self) -> Optional[EmbeddingModel]:
        return None if self.backend is None else self.backend.model

    @property
    def lock(self):
        return self.backend.lock

    def snapshot(self) -> Optional[EmbeddingModel]:
        return None if self.backend is None else self.backend.snapshot()


@dataclass
class SyncBaseline:
    """Counts a worker inherited at its last pull from the store."""

    counts: dict[str, int] = field(default_factory=dict)
    pending: dict[str, int] = field(default_factory=dict)
    total_tokens: int = 0


def count_delta(model: EmbeddingModel, baseline: SyncBaseline) -> EmbeddingModel:
    """Copy of ``model`` whose counts exclude what was already pulled from the store."""
    out = model.copy()
    out.total_tokens = max(model.total_tokens - baseline.total_tokens, 0)
    if baseline.counts:
        base = np.fromiter((baseline.counts.get(w, 0) for w in out.words), dtype=np.int64, count=len(out))
        out._counts[: len(out)] = np.maximum(out.counts - base, 0)
    if baseline.pending:
        for w, c in list(out.pending.items()):
            d = c - baseline.pending.get(w, 0)
            if d > 0:
                out.pending[w] = d
            else:
                del out.pending[w]
                out.pending_last.pop(w, None)
    return out


def sync(worker_model: EmbeddingModel, store: ModelStore, baseline: Optional[SyncBaseline] = None):
    """Exchange a worker model with the store.

    Hybrid: the worker's model is merged into the shared one and the worker
    continues from a copy of the result. Only counts gathered since the last
    pull are pushed, so repeated syncs do not inflate frequencies. Local and
    Global are no-ops (Global workers train on the shared model directly).
    Returns the worker's new model and the baseline for the next call.
    """
    if store.strategy is not Strategy.HYBRID:
        return worker_model, baseline
    pushed = count_delta(worker_model, baseline or SyncBaseline())
    merged = store.backend.merge_in(pushed, store.pooling)
    baseline = SyncBaseline(dict(zip(merged.words, merged.counts.tolist())), dict(merged.pending), merged.total_tokens)
    return merged, baseline

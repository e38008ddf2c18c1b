"""Incrementally trained skip-gram word vectors with negative sampling.

Words live in rows of two growable float32 matrices (input vectors and
context vectors). The vocabulary grows as the stream introduces words and
shrinks only through :func:`polarity_stream.model_mgmt.prune_lru`.
"""

from __future__ import annotations

import io
import math
import struct
from pathlib import Path
from typing import BinaryIO, Iterable, Optional

import numba
import numpy as np

from .preprocess import Batch

SNAPSHOT_MAGIC = b"WEMB"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<4sHIQQ")
_RECORD_HEAD = struct.Struct("<IQq")


class EmbeddingModel:
    """Word -> (vector, context vector, count, last_used) table.

    Words below the minimum count are tracked in ``pending`` and are not part
    of the vocabulary proper until they reach it.
    """

    def __init__(self, dim: int, dtype=np.float32, capacity: int = 1024):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim
        self.dtype = np.dtype(dtype)
        self.index: dict[str, int] = {}
        self.words: list[str] = []
        self._vec = np.zeros((capacity, dim), dtype=self.dtype)
        self._ctx = np.zeros((capacity, dim), dtype=self.dtype)
        self._counts = np.zeros(capacity, dtype=np.int64)
        self._last_used = np.zeros(capacity, dtype=np.int64)
        self.pending: dict[str, int] = {}
        self.pending_last: dict[str, int] = {}
        self.total_tokens = 0
        self._neg_table: Optional[np.ndarray] = None

    # -- views -------------------------------------------------------------

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self.index

    @property
    def vectors(self) -> np.ndarray:
        return self._vec[: len(self.words)]

    @property
    def context_vectors(self) -> np.ndarray:
        return self._ctx[: len(self.words)]

    @property
    def counts(self) -> np.ndarray:
        return self._counts[: len(self.words)]

    @property
    def last_used(self) -> np.ndarray:
        return self._last_used[: len(self.words)]

    def vector(self, word: str) -> np.ndarray:
        return self.vectors[self.index[word]]

    def context_vector(self, word: str) -> np.ndarray:
        return self.context_vectors[self.index[word]]

    def count(self, word: str) -> int:
        if word in self.index:
            return int(self.counts[self.index[word]])
        return self.pending.get(word, 0)

    def as_dict(self) -> dict[str, tuple[np.ndarray, np.ndarray, int, int]]:
        return {
            w: (self._vec[i].copy(), self._ctx[i].copy(), int(self._counts[i]), int(self._last_used[i]))
            for w, i in self.index.items()
        }

    # -- mutation ----------------------------------------------------------

    def _reserve(self, n: int) -> None:
        cap = self._vec.shape[0]
        if n <= cap:
            return
        new_cap = max(n, 2 * cap)
        for name in ("_vec", "_ctx"):
            old = getattr(self, name)
            grown = np.zeros((new_cap, self.dim), dtype=self.dtype)
            grown[: len(self.words)] = old[: len(self.words)]
            setattr(self, name, grown)
        for name in ("_counts", "_last_used"):
            old = getattr(self, name)
            grown = np.zeros(new_cap, dtype=np.int64)
            grown[: len(self.words)] = old[: len(self.words)]
            setattr(self, name, grown)

    def add_word(self, word: str, vector, context, count: int, last_used: int) -> int:
        if word in self.index:
            raise KeyError(f"{word!r} already in vocabulary")
        if count < 1:
            raise ValueError("stored words need count >= 1")
        i = len(self.words)
        self._reserve(i + 1)
        self._vec[i] = vector
        self._ctx[i] = context
        self._counts[i] = count
        self._last_used[i] = last_used
        self.index[word] = i
        self.words.append(word)
        return i

    def keep_rows(self, keep: np.ndarray) -> None:
        """Compact the vocabulary to the rows where ``keep`` is true."""
        n = len(self.words)
        rows = np.flatnonzero(keep[:n])
        m = len(rows)
        self._vec[:m] = self._vec[rows]
        self._ctx[:m] = self._ctx[rows]
        self._counts[:m] = self._counts[rows]
        self._last_used[:m] = self._last_used[rows]
        self._vec[m:n] = 0
        self._ctx[m:n] = 0
        self.words = [self.words[r] for r in rows]
        self.index = {w: i for i, w in enumerate(self.words)}
        self._neg_table = None

    def copy(self) -> "EmbeddingModel":
        out = EmbeddingModel.__new__(EmbeddingModel)
        out.dim = self.dim
        out.dtype = self.dtype
        out.index = dict(self.index)
        out.words = list(self.words)
        n = max(len(self.words), 1)
        out._vec = self._vec[:n].copy()
        out._ctx = self._ctx[:n].copy()
        out._counts = self._counts[:n].copy()
        out._last_used = self._last_used[:n].copy()
        out.pending = dict(self.pending)
        out.pending_last = dict(self.pending_last)
        out.total_tokens = self.total_tokens
        out._neg_table = None if self._neg_table is None else self._neg_table.copy()
        return out

    def scaled(self, factor: float) -> "EmbeddingModel":
        out = self.copy()
        out._vec *= out.dtype.type(factor)
        out._ctx *= out.dtype.type(factor)
        return out

    def refresh_negative_table(self) -> None:
        """Rebuild the unigram^0.75 sampling table from current counts.

        Like word2vec, each word fills a share of a fixed-size table
        proportional to its weight, so drawing a negative is one lookup.
        """
        weights = self.counts.astype(np.float64) ** 0.75
        size = int(np.clip(16 * len(weights), 1 << 16, 1 << 20))
        cum = np.cumsum(weights)
        if len(cum) == 0:
            self._neg_table = np.zeros(0, dtype=np.int32)
            return
        points = (np.arange(size) + 0.5) * (cum[-1] / size)
        self._neg_table = np.searchsorted(cum, points, side="right").astype(np.int32)

    @property
    def negative_table(self) -> np.ndarray:
        if self._neg_table is None or len(self._neg_table) == 0:
            self.refresh_negative_table()
        return self._neg_table

    def all_finite(self) -> bool:
        return bool(np.isfinite(self.vectors).all() and np.isfinite(self.context_vectors).all())

    def identical_to(self, other: "EmbeddingModel") -> bool:
        """Bitwise equality of vocabulary, vectors, counts and recency."""
        return (
            self.dim == other.dim
            and self.words == other.words
            and np.array_equal(self.vectors, other.vectors)
            and np.array_equal(self.context_vectors, other.context_vectors)
            and np.array_equal(self.counts, other.counts)
            and np.array_equal(self.last_used, other.last_used)
            and self.total_tokens == other.total_tokens
        )

    # -- snapshot I/O ------------------------------------------------------

    def write_snapshot(self, fh: BinaryIO) -> None:
        fh.write(_HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, self.dim, len(self.words), self.total_tokens))
        for i, word in enumerate(self.words):
            raw = word.encode("utf-8")
            fh.write(_RECORD_HEAD.pack(len(raw), int(self._counts[i]), int(self._last_used[i])))
            fh.write(raw)
            fh.write(self._vec[i].astype("<f4").tobytes())
            fh.write(self._ctx[i].astype("<f4").tobytes())

    @classmethod
    def read_snapshot(cls, fh: BinaryIO) -> "EmbeddingModel":
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ValueError("truncated snapshot header")
        magic, version, dim, size, total = _HEADER.unpack(head)
        if magic != SNAPSHOT_MAGIC:
            raise ValueError(f"not a model snapshot (magic {magic!r})")
        if version != SNAPSHOT_VERSION:
            raise ValueError(f"unsupported snapshot version {version}")
        model = cls(dim, capacity=max(size, 1))
        vec_bytes = 4 * dim
        for _ in range(size):
            rec = fh.read(_RECORD_HEAD.size)
            if len(rec) != _RECORD_HEAD.size:
                raise ValueError("truncated snapshot record")
            n, count, last = _RECORD_HEAD.unpack(rec)
            word = fh.read(n).decode("utf-8")
            body = fh.read(2 * vec_bytes)
            if len(body) != 2 * vec_bytes:
                raise ValueError("truncated snapshot vectors")
            vec = np.frombuffer(body[:vec_bytes], dtype="<f4")
            ctx = np.frombuffer(body[vec_bytes:], dtype="<f4")
            model.add_word(word, vec, ctx, count, last)
        model.total_tokens = total
        return model

    def save(self, path: str | Path) -> None:
        with open(path, "wb") as fh:
            self.write_snapshot(fh)

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingModel":
        with open(path, "rb") as fh:
            return cls.read_snapshot(fh)

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        self.write_snapshot(buf)
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "EmbeddingModel":
        return cls.read_snapshot(io.BytesIO(data))


def observe_vocab(model: EmbeddingModel, batch: Batch | Iterable, min_count: int, rng: np.random.Generator,
                  encoded: Optional[tuple[np.ndarray, np.ndarray]] = None) -> int:
    """Count every token; words reaching ``min_count`` join the vocabulary.

    New input vectors are drawn uniformly from [-0.5/dim, 0.5/dim], context
    vectors start at zero. ``last_used`` becomes the seq of the latest tuple
    containing the word. Returns the number of words added.

    ``encoded`` is an :func:`encode_batch` result taken before this call; its
    row array is patched in place so it stays valid for the grown vocabulary.
    """
    tuples = batch.tuples if isinstance(batch, Batch) else list(batch)
    rows, offsets = encoded if encoded is not None else encode_batch(model, tuples)
    if len(rows) == 0:
        return 0
    model.total_tokens += len(rows)
    seqs = np.repeat(np.fromiter((ct.origin.seq for ct in tuples), dtype=np.int64, count=len(tuples)),
                     np.diff(offsets))
    known = rows >= 0
    np.add.at(model._counts, rows[known], 1)
    np.maximum.at(model._last_used, rows[known], seqs[known])
    unknown = np.flatnonzero(~known)
    if len(unknown) == 0:
        return 0
    flat = [tok for ct in tuples for tok in ct.tokens]
    half = 0.5 / model.dim
    added = 0
    for pos in unknown.tolist():
        tok = flat[pos]
        seq = int(seqs[pos])
        i = model.index.get(tok)
        if i is not None:
            model._counts[i] += 1
            model._last_used[i] = max(int(model._last_used[i]), seq)
            rows[pos] = i
            continue
        c = model.pending.get(tok, 0) + 1
        if c >= min_count:
            model.pending.pop(tok, None)
            model.pending_last.pop(tok, None)
            vec = rng.uniform(-half, half, model.dim)
            rows[pos] = model.add_word(tok, vec, 0.0, c, seq)
            added += 1
        else:
            model.pending[tok] = c
            model.pending_last[tok] = seq
    return added


def vector_of(model: EmbeddingModel, word: str, seq: Optional[int] = None) -> Optional[np.ndarray]:
    i = model.index.get(word)
    if i is None:
        return None
    if seq is not None:
        model._last_used[i] = max(int(model._last_used[i]), seq)
    return model._vec[i]


def encode_batch(model: EmbeddingModel, batch: Batch | Iterable) -> tuple[np.ndarray, np.ndarray]:
    """Flatten a batch into (row indices, sentence offsets); -1 marks unknown tokens."""
    tuples = batch.tuples if isinstance(batch, Batch) else batch
    lookup = model.index.get
    lengths = [len(ct.tokens) for ct in tuples]
    flat = [lookup(tok, -1) for ct in tuples for tok in ct.tokens]
    offsets = np.zeros(len(lengths) + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    return np.asarray(flat, dtype=np.int64), offsets


def subsample_mask(model: EmbeddingModel, rows: np.ndarray, threshold: float, rng: np.random.Generator) -> np.ndarray:
    """Frequent-word downsampling keep-mask (word2vec formula)."""
    known = rows >= 0
    freq = np.zeros(len(rows))
    freq[known] = model.counts[rows[known]] / max(model.total_tokens, 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(freq > 0, threshold / freq, np.inf)
        keep_p = np.sqrt(ratio) + ratio
    return ~known | (rng.random(len(rows)) < keep_p)


def train_batch(model: EmbeddingModel, batch: Batch | Iterable, hp, seed: int,
                encoded: Optional[tuple[np.ndarray, np.ndarray]] = None) -> float:
    """One skip-gram negative-sampling pass over the batch; returns summed NLL.

    Every (center, context) pair with |i - j| <= window is updated once, using
    ``hp.negative`` words drawn from the unigram^0.75 table. ``encoded`` may
    pass a precomputed :func:`encode_batch` result for this model state.
    """
    rows, offsets = encoded if encoded is not None else encode_batch(model, batch)
    if len(rows) == 0 or len(model) == 0 or not (rows >= 0).any():
        return 0.0
    if hp.subsample:
        rng = np.random.default_rng(seed)
        rows = np.where(subsample_mask(model, rows, hp.subsample, rng), rows, -1)
    loss = _sgns_batch(
        model.vectors,
        model.context_vectors,
        model.negative_table,
        rows,
        offsets,
        int(hp.window),
        int(hp.negative),
        float(hp.alpha),
        np.uint64(seed & 0xFFFFFFFFFFFFFFFF),
    )
    if not model.all_finite():
        raise FloatingPointError("training produced non-finite vector components; lower alpha")
    return float(loss)


# -- kernels -----------------------------------------------------------------


@numba.njit(cache=True, nogil=True)
def _sig_and_nll(f, positive):
    """(sigmoid(f), -log sigmoid(+f)) for positive pairs, (sigmoid(f), -log sigmoid(-f)) otherwise."""
    e = math.exp(-abs(f))
    sig = 1.0 / (1.0 + e) if f >= 0 else e / (1.0 + e)
    # -log sigmoid(x) = log1p(exp(-|x|)) + max(-x, 0)
    x = f if positive else -f
    nll = math.log1p(e) + max(-x, 0.0)
    return sig, nll


@numba.njit(cache=True, nogil=True)
def _dot(a, i, b, j):
    acc = 0.0
    for c in range(a.shape[1]):
        acc += a[i, c] * b[j, c]
    return acc


@numba.njit(cache=True, nogil=True)
def _sgns_pair(syn0, syn1, center, context, negs, n_neg, alpha, neu1e):
    """Gradient step for one (center, context, negatives) triple; returns its NLL.

    Negatives equal to the context word are skipped.
    """
    dim = syn0.shape[1]
    for c in range(dim):
        neu1e[c] = 0.0
    sig, loss = _sig_and_nll(_dot(syn0, center, syn1, context), True)
    g = alpha * (1.0 - sig)
    for c in range(dim):
        neu1e[c] += g * syn1[context, c]
        syn1[context, c] += g * syn0[center, c]
    for k in range(n_neg):
        target = negs[k]
        if target == context:
            continue
        sig, nll = _sig_and_nll(_dot(syn0, center, syn1, target), False)
        loss += nll
        g = -alpha * sig
        for c in range(dim):
            neu1e[c] += g * syn1[target, c]
            syn1[target, c] += g * syn0[center, c]
    for c in range(dim):
        syn0[center, c] += neu1e[c]
    return loss


@numba.njit(cache=True, nogil=True)
def _draw(table, state):
    state = state * np.uint64(25214903917) + np.uint64(11)
    k = (state >> np.uint64(16)) % np.uint64(table.shape[0])
    return table[k], state


@numba.njit(cache=True, nogil=True)
def _sgns_batch(syn0, syn1, table, rows, offsets, window, negative, alpha, seed):
    neu1e = np.zeros(syn0.shape[1], dtype=syn0.dtype)
    negs = np.empty(negative, dtype=np.int64)
    state = seed ^ np.uint64(0x5DEECE66D)
    loss = 0.0
    for s in range(offsets.shape[0] - 1):
        start = offsets[s]
        end = offsets[s + 1]
        for i in range(start, end):
            center = rows[i]
            if center < 0:
                continue
            lo = max(start, i - window)
            hi = min(end, i + window + 1)
            for j in range(lo, hi):
                if j == i or rows[j] < 0:
                    continue
                for k in range(negative):
                    negs[k], state = _draw(table, state)
                loss += _sgns_pair(syn0, syn1, center, rows[j], negs, negative, alpha, neu1e)
    return loss


def sgns_pair_step(model: EmbeddingModel, center: str, context: str, negatives: list[str], alpha: float) -> float:
    """Apply a single pair update in place (exposed for gradient checks)."""
    negs = np.asarray([model.index[w] for w in negatives], dtype=np.int64)
    neu1e = np.zeros(model.dim, dtype=model.dtype)
    return float(
        _sgns_pair(
            model.vectors, model.context_vectors, model.index[center], model.index[context],
            negs, len(negs), alpha, neu1e,
        )
    )


def sgns_pair_loss(u: np.ndarray, v: np.ndarray, negs: np.ndarray) -> float:
    """-log s(u.v) - sum_k log s(-u.n_k) for a center vector u."""
    def log_sig(x):
        return -np.logaddexp(0.0, -x)
    return float(-log_sig(u @ v) - sum(log_sig(-(u @ n)) for n in negs))


def sgns_pair_gradient(u: np.ndarray, v: np.ndarray, negs: np.ndarray):
    """Analytic gradient of :func:`sgns_pair_loss` w.r.t. (u, v, each negative)."""
    def sig(x):
        return 1.0 / (1.0 + np.exp(-x))
    gv_coef = sig(u @ v) - 1.0
    grad_u = gv_coef * v
    grad_negs = []
    for n in negs:
        s = sig(u @ n)
        grad_u = grad_u + s * n
        grad_negs.append(s * u)
    return grad_u, gv_coef * u, np.array(grad_negs)

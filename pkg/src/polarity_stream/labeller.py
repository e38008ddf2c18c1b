"""Word-centroid similarity labelling against a reference table."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .embedding import EmbeddingModel, encode_batch
from .core_model import CleanTuple, Polarity, ReferenceTable, TrendState
from .trend import majority


class NoKnownWords(Exception):
    """None of the tuple's tokens is in the model vocabulary."""


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = np.sqrt(a @ a)
    nb = np.sqrt(b @ b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip((a @ b) / (na * nb), -1.0, 1.0))


def centroid(model: EmbeddingModel, tokens: Sequence[str], seq: Optional[int] = None) -> tuple[np.ndarray, int]:
    """Mean vector of the tokens present in the model.

    Unknown tokens are skipped and not counted. Raises :class:`NoKnownWords`
    when nothing is known.
    """
    rows = [model.index[t] for t in tokens if t in model.index]
    if not rows:
        raise NoKnownWords(tokens)
    idx = np.asarray(rows, dtype=np.int64)
    if seq is not None:
        np.maximum.at(model._last_used, idx, seq)
    vec = model.vectors[idx].astype(np.float64).sum(axis=0) / len(rows)
    return vec, len(rows)


@dataclass
class ReferenceIndex:
    """Reference vectors gathered from a model snapshot.

    Words missing from the model get a zero row, which the degenerate-vector
    rule maps to a cosine of 0, so every reference word is evaluated.
    """

    matrix: np.ndarray
    norms: np.ndarray
    n_pos: int
    pos_covered: int
    neg_covered: int

    @classmethod
    def build(cls, model: EmbeddingModel, ref: ReferenceTable) -> "ReferenceIndex":
        words = list(ref.positive) + list(ref.negative)
        matrix = np.zeros((len(words), model.dim))
        covered = np.zeros(len(words), dtype=bool)
        for k, w in enumerate(words):
            i = model.index.get(w)
            if i is not None:
                matrix[k] = model.vectors[i]
                covered[k] = True
        n_pos = len(ref.positive)
        return cls(
            matrix,
            np.sqrt((matrix * matrix).sum(axis=1)),
            n_pos,
            int(covered[:n_pos].sum()),
            int(covered[n_pos:].sum()),
        )


class CosineCounter:
    """Counts cosine evaluations made by :func:`score`."""

    def __init__(self):
        self.evaluations = 0
        self.calls = 0

    def add(self, n: int) -> None:
        self.evaluations += n
        self.calls += 1


def similarities(vec: np.ndarray, refs: ReferenceIndex) -> np.ndarray:
    norm = np.sqrt(vec @ vec)
    denom = refs.norms * norm
    dots = refs.matrix @ vec
    out = np.zeros(len(dots))
    nz = denom > 0
    out[nz] = np.clip(dots[nz] / denom[nz], -1.0, 1.0)
    return out


def score(
    model: EmbeddingModel | None,
    centroid_vec: np.ndarray,
    ref: ReferenceTable | ReferenceIndex,
    *,
    normalize: bool = False,
    counter: CosineCounter | None = None,
) -> tuple[float, float]:
    """Summed cosine of the centroid against the positive and negative references.

    ``ref`` may be a prebuilt :class:`ReferenceIndex` to skip the gathering
    step when labelling many tuples against one model state.
    """
    refs = ref if isinstance(ref, ReferenceIndex) else ReferenceIndex.build(model, ref)
    sims = similarities(np.asarray(centroid_vec, dtype=np.float64), refs)
    if counter is not None:
        counter.add(len(sims))
    sum_pos = float(sims[: refs.n_pos].sum())
    sum_neg = float(sims[refs.n_pos:].sum())
    if normalize:
        sum_pos = sum_pos / refs.pos_covered if refs.pos_covered else 0.0
        sum_neg = sum_neg / refs.neg_covered if refs.neg_covered else 0.0
    return sum_pos, sum_neg


def decide(sum_pos: float, sum_neg: float, trend: TrendState | None, known_count: int) -> Polarity:
    """Weighted comparison of the two sums.

    Ties and tuples with no known words fall back to the majority label of the
    current trend window, or Positive when the window is empty or trend
    detection is disabled.
    """
    if known_count > 0:
        wc_pos = trend.wc_pos if trend is not None else 1.0
        wc_neg = trend.wc_neg if trend is not None else 1.0
        p = wc_pos * sum_pos
        n = wc_neg * sum_neg
        if p > n:
            return Polarity.POSITIVE
        if p < n:
            return Polarity.NEGATIVE
    if trend is not None and trend.enabled:
        return majority(trend) or Polarity.POSITIVE
    return Polarity.POSITIVE


def evidence(sum_pos: float, sum_neg: float, known_count: int) -> Optional[Polarity]:
    """Unweighted verdict fed to trend detection; None when there is nothing to go on.

    The trend window must see this rather than the weighted label, otherwise
    a raised coefficient inflates its own window ratio and locks in.
    """
    if known_count == 0 or sum_pos == sum_neg:
        return None
    return Polarity.POSITIVE if sum_pos > sum_neg else Polarity.NEGATIVE


def label_tokens(
    model: EmbeddingModel,
    tokens: Sequence[str],
    refs: ReferenceIndex,
    trend: TrendState | None,
    *,
    normalize: bool = False,
    counter: CosineCounter | None = None,
    seq: Optional[int] = None,
) -> tuple[Polarity, float, float, int]:
    """centroid -> score -> decide for one token list; returns (label, sum_pos, sum_neg, known)."""
    try:
        vec, known = centroid(model, tokens, seq)
    except NoKnownWords:
        return decide(0.0, 0.0, trend, 0), 0.0, 0.0, 0
    sum_pos, sum_neg = score(model, vec, refs, normalize=normalize, counter=counter)
    return decide(sum_pos, sum_neg, trend, known), sum_pos, sum_neg, known


@dataclass
class BatchScores:
    centroids: np.ndarray
    sum_pos: np.ndarray
    sum_neg: np.ndarray
    known: np.ndarray


def score_batch(
    model: EmbeddingModel,
    tuples: Sequence[CleanTuple],
    refs: ReferenceIndex,
    *,
    normalize: bool = False,
    counter: CosineCounter | None = None,
    touch: bool = True,
    encoded: Optional[tuple[np.ndarray, np.ndarray]] = None,
) -> BatchScores:
    """Vectorized :func:`centroid` + :func:`score` over many tuples.

    Tuples without known words get a zero centroid, zero sums and known=0;
    they do not count as scored. With ``touch`` the ``last_used`` of every
    known token is raised to its tuple's seq.
    """
    n = len(tuples)
    rows, offsets = encoded if encoded is not None else encode_batch(model, tuples)
    mask = rows >= 0
    cum = np.concatenate(([0], np.cumsum(mask)))
    known = cum[offsets[1:]] - cum[offsets[:-1]]
    centroids = np.zeros((n, model.dim))
    hit = known > 0
    if hit.any():
        krows = rows[mask]
        if touch:
            lengths = np.diff(offsets)
            seqs = np.repeat(np.fromiter((ct.origin.seq for ct in tuples), dtype=np.int64, count=n), lengths)
            np.maximum.at(model._last_used, krows, seqs[mask])
        gathered = model.vectors[krows].astype(np.float64)
        starts = cum[offsets[:-1]][hit]
        centroids[hit] = np.add.reduceat(gathered, starts, axis=0) / known[hit, None]
    dots = centroids @ refs.matrix.T
    denom = np.sqrt((centroids * centroids).sum(axis=1))[:, None] * refs.norms[None, :]
    sims = np.zeros_like(dots)
    nz = denom > 0
    sims[nz] = np.clip(dots[nz] / denom[nz], -1.0, 1.0)
    sum_pos = sims[:, : refs.n_pos].sum(axis=1)
    sum_neg = sims[:, refs.n_pos:].sum(axis=1)
    if normalize:
        sum_pos = sum_pos / refs.pos_covered if refs.pos_covered else np.zeros(n)
        sum_neg = sum_neg / refs.neg_covered if refs.neg_covered else np.zeros(n)
    if counter is not None:
        scored = int(hit.sum())
        counter.evaluations += scored * sims.shape[1]
        counter.calls += scored
    return BatchScores(centroids, sum_pos, sum_neg, known)

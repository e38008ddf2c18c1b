"""Comparison labellers: lexicon scoring and streaming 2-means clustering."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .core_model import Polarity


def parse_lexicon(lines: Iterable[str]) -> dict[str, float]:
    """Read a lexicon in either ``word<TAB>score`` or SentiWordNet 3.0 layout.

    SentiWordNet rows (POS, ID, PosScore, NegScore, SynsetTerms, Gloss) are
    reduced to one score per word: PosScore - NegScore averaged over every
    synset the word appears in. Multiword terms keep their underscores.
    """
    simple: dict[str, float] = {}
    sums: dict[str, float] = defaultdict(float)
    n: dict[str, int] = defaultdict(int)
    for lineno, raw in enumerate(lines, 1):
        line = raw.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) >= 5:
            try:
                pos_score, neg_score = float(parts[2]), float(parts[3])
            except ValueError as exc:
                raise ValueError(f"line {lineno}: bad SentiWordNet scores") from exc
            for term in parts[4].split():
                word = term.rsplit("#", 1)[0].lower()
                sums[word] += pos_score - neg_score
                n[word] += 1
        elif len(parts) == 2:
            simple[parts[0].strip().lower()] = float(parts[1])
        else:
            raise ValueError(f"line {lineno}: expected word<TAB>score or a SentiWordNet row")
    lexicon = {w: sums[w] / n[w] for w in sums}
    lexicon.update(simple)
    return lexicon


def load_lexicon(path: str | Path) -> dict[str, float]:
    with open(path, encoding="utf-8") as fh:
        return parse_lexicon(fh)


def lexicon_score(tokens: Sequence[str], lexicon: dict[str, float]) -> float:
    return float(sum(lexicon.get(t, 0.0) for t in tokens))


def lexicon_label(tokens: Sequence[str], lexicon: dict[str, float]) -> Polarity:
    """Sign of the summed token scores; unknown tokens score 0 and a zero total is Positive."""
    total = lexicon_score(tokens, lexicon)
    return Polarity.NEGATIVE if total < 0 else Polarity.POSITIVE


def _cos_dist(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 1.0
    return 1.0 - float(a @ b) / (na * nb)


@dataclass
class TwoMeans:
    """Streaming k-means with k=2 over tuple centroids.

    Centers start at the first two distinct points and follow the running mean
    of their members. Which cluster means "positive" is decided by the mean
    reference-positive score of each cluster's members; the mapping is frozen
    once ``calibration`` points have been seen.
    """

    calibration: int = 500
    centers: list = field(default_factory=list)
    counts: list = field(default_factory=list)
    ref_sum: list = field(default_factory=lambda: [0.0, 0.0])
    ref_n: list = field(default_factory=lambda: [0, 0])
    seen: int = 0
    positive_cluster: Optional[int] = None

    def assign(self, vec: np.ndarray) -> int:
        d = [_cos_dist(vec, c) for c in self.centers]
        return int(np.argmin(d))

    def update(self, k: int, vec: np.ndarray) -> None:
        self.counts[k] += 1
        self.centers[k] = self.centers[k] + (vec - self.centers[k]) / self.counts[k]

    def _provisional_positive(self) -> int:
        means = [self.ref_sum[k] / self.ref_n[k] if self.ref_n[k] else -np.inf for k in (0, 1)]
        return 0 if means[0] >= means[1] else 1

    def label(self, vec: np.ndarray, ref_score: float = 0.0) -> tuple[Polarity, Optional[int]]:
        vec = np.asarray(vec, dtype=np.float64)
        if len(self.centers) < 2:
            if not self.centers:
                self.centers.append(vec.copy())
                self.counts.append(1)
                k = 0
            elif not np.array_equal(vec, self.centers[0]):
                self.centers.append(vec.copy())
                self.counts.append(1)
                k = 1
            else:
                self.update(0, vec)
                k = 0
            self._calibrate(k, ref_score)
            return Polarity.POSITIVE, k
        k = self.assign(vec)
        self.update(k, vec)
        self._calibrate(k, ref_score)
        pos = self.positive_cluster if self.positive_cluster is not None else self._provisional_positive()
        return (Polarity.POSITIVE if k == pos else Polarity.NEGATIVE), k

    def _calibrate(self, k: int, ref_score: float) -> None:
        if self.positive_cluster is not None:
            return
        self.ref_sum[k] += ref_score
        self.ref_n[k] += 1
        self.seen += 1
        if self.seen >= self.calibration and len(self.centers) == 2:
            self.positive_cluster = self._provisional_positive()


def stream_kmeans_label(centroid_vec, clusters: TwoMeans, ref_score: float = 0.0) -> tuple[Polarity, TwoMeans]:
    label, _ = clusters.label(centroid_vec, ref_score)
    return label, clusters

"""Seeded synthetic review corpora with planted polarity structure.

Positive texts draw their sentiment-bearing words from a positive pool
(reference positives plus made-up positive words), negatives from a negative
pool; the rest of each text is Zipf-distributed topic filler. Used for
tests and offline benchmarks when the public datasets are not at hand.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, TextIO

import numpy as np

from .core_model import Polarity, ReferenceTable


@dataclass
class CorpusConfig:
    n_sentiment_words: int = 300
    n_topic_words: int = 3000
    mean_length: float = 40.0
    sentiment_rate: float = 0.25
    anchor_rate: float = 0.15
    crossover: float = 0.15
    pos_fraction: float = 0.5
    seed: int = 0


def _words(prefix: str, n: int, rng: np.random.Generator) -> list[str]:
    letters = np.array(list("abcdefghijklmnopqrstuvwxyz"))
    out = set()
    while len(out) < n:
        out.add(prefix + "".join(rng.choice(letters, 5)))
    return sorted(out)


class SyntheticCorpus:
    def __init__(self, cfg: CorpusConfig = CorpusConfig(), ref: Optional[ReferenceTable] = None):
        self.cfg = cfg
        self.ref = ref or ReferenceTable.default()
        rng = np.random.default_rng(cfg.seed)
        self.pos_words = _words("p", cfg.n_sentiment_words, rng)
        self.neg_words = _words("n", cfg.n_sentiment_words, rng)
        self.topic_words = _words("t", cfg.n_topic_words, rng)
        ranks = np.arange(1, cfg.n_topic_words + 1)
        self.topic_p = 1.0 / ranks
        self.topic_p /= self.topic_p.sum()
        self.sent_p = 1.0 / np.sqrt(np.arange(1, cfg.n_sentiment_words + 1))
        self.sent_p /= self.sent_p.sum()
        self._topic_cum = np.cumsum(self.topic_p)
        self._sent_cum = np.cumsum(self.sent_p)

    def text(self, label: Polarity, rng: np.random.Generator, length: Optional[int] = None) -> str:
        s = self.cfg
        n = length if length is not None else max(3, int(rng.poisson(s.mean_length)))
        kind = rng.random(n)
        flip = rng.random(n) < s.crossover
        anchor = rng.random(n) < s.anchor_rate
        topic_idx = np.searchsorted(self._topic_cum, rng.random(n) * self._topic_cum[-1])
        sent_idx = np.searchsorted(self._sent_cum, rng.random(n) * self._sent_cum[-1])
        ref_draw = rng.random(n)
        toks = []
        for i in range(n):
            if kind[i] < s.sentiment_rate:
                positive = (label is Polarity.POSITIVE) != bool(flip[i])
                if anchor[i]:
                    pool = self.ref.positive if positive else self.ref.negative
                    toks.append(pool[int(ref_draw[i] * len(pool))])
                else:
                    pool = self.pos_words if positive else self.neg_words
                    toks.append(pool[sent_idx[i]])
            else:
                toks.append(self.topic_words[topic_idx[i]])
        return " ".join(toks)

    def rows(self, n: int, seed: Optional[int] = None, pos_fraction: Optional[float] = None) -> Iterator[tuple[Polarity, str]]:
        rng = np.random.default_rng(self.cfg.seed + 1 if seed is None else seed)
        frac = self.cfg.pos_fraction if pos_fraction is None else pos_fraction
        for _ in range(n):
            label = Polarity.POSITIVE if rng.random() < frac else Polarity.NEGATIVE
            yield label, self.text(label, rng)


def write_yelp_csv(rows, fh: TextIO) -> int:
    w = csv.writer(fh, quoting=csv.QUOTE_ALL, lineterminator="\n")
    n = 0
    for label, text in rows:
        w.writerow(["2" if label is Polarity.POSITIVE else "1", text])
        n += 1
    return n


def write_sentiment140_csv(rows, fh: TextIO) -> int:
    w = csv.writer(fh, quoting=csv.QUOTE_ALL, lineterminator="\n")
    n = 0
    for i, (label, text) in enumerate(rows):
        w.writerow(["4" if label is Polarity.POSITIVE else "0", str(i), "Mon Apr 06 22:19:45 PDT 2009",
                    "NO_QUERY", f"user{i}", text])
        n += 1
    return n


def generate(path: str | Path, n: int, fmt: str = "yelp", cfg: CorpusConfig = CorpusConfig()) -> int:
    corpus = SyntheticCorpus(cfg)
    writer = write_yelp_csv if fmt == "yelp" else write_sentiment140_csv
    with open(path, "w", encoding="utf-8", newline="") as fh:
        return writer(corpus.rows(n), fh)

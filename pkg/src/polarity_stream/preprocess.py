"""Tokenization, noise filtering and count/timeout batching."""

from __future__ import annotations

import re
import time
import unicodedata
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Optional

from .core_model import CleanTuple, StreamTuple

_EMOTICON = re.compile(
    r"""^(?:
        [:;=][-o^']?[()\[\]dpo/\\|*3$@]+    # :) ;-( :D :P :/ =]
      | [()\[\]/\\|]+[-o^']?[:;=]           # (: ]:
      | </?3+                                # <3 </3
      | [\^\-t][_.][\^\-t]                   # ^_^ -_- t.t
      | x[d]+                                # xD
    )$""",
    re.VERBOSE,
)
_NUMERIC = re.compile(r"^[+\-]?[\d.,:/\-]*\d[\d.,:/\-]*$")


def _is_edge_char(ch: str) -> bool:
    return unicodedata.category(ch)[0] in "PSCZ"


def _strip_edges(token: str, keep: str = "") -> str:
    start, end = 0, len(token)
    while start < end and token[start] not in keep and _is_edge_char(token[start]):
        start += 1
    while end > start and token[end - 1] not in keep and _is_edge_char(token[end - 1]):
        end -= 1
    return token[start:end]


def filter_token(raw: str, stopwords: frozenset[str] | set[str]) -> Optional[str]:
    """Return the cleaned form of one whitespace-delimited token, or None to drop it."""
    tok = raw.lower()
    if tok.isalpha():
        if tok in stopwords or (tok[0] == "x" and _EMOTICON.match(tok)):
            return None
        return tok
    tok = tok.replace("’", "'")
    if "://" in tok or tok.startswith("www."):
        return None
    if _EMOTICON.match(tok):
        return None
    tok = _strip_edges(tok, keep="@#")
    if tok.startswith(("@", "#")):
        return None
    tok = _strip_edges(tok)
    if not tok or _NUMERIC.match(tok) or tok in stopwords:
        return None
    return tok


def tokenize_and_filter(tup: StreamTuple, stopwords: frozenset[str] | set[str]) -> CleanTuple:
    """Lowercase, split on whitespace and drop tokens carrying no sentiment.

    Dropped: stopwords, numerals, @usernames, #hashtags, URLs, emoticons and
    punctuation-only tokens. Punctuation is stripped from token edges only, so
    contractions keep their apostrophe. No POS filtering is applied.
    """
    tokens = []
    for raw in tup.text.split():
        tok = filter_token(raw, stopwords)
        if tok is not None:
            tokens.append(tok)
    return CleanTuple(tup.origin, tuple(tokens))


@dataclass
class Batch:
    tuples: list[CleanTuple]
    open_ts: float

    def __len__(self) -> int:
        return len(self.tuples)


@dataclass
class Batcher:
    """Accumulates items into batches of at most ``size``.

    The owner calls :meth:`add` for each arrival and :meth:`poll` whenever it
    wakes up; either returns a full/expired batch or ``None``.
    """

    size: int
    timeout: float = 0.5
    clock: Callable[[], float] = time.monotonic
    _items: list = field(default_factory=list)
    _open_ts: float = 0.0

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("batch size must be >= 1")

    def add(self, item) -> Optional[Batch]:
        if not self._items:
            self._open_ts = self.clock()
        self._items.append(item)
        if len(self._items) >= self.size:
            return self.flush()
        return None

    def poll(self) -> Optional[Batch]:
        if self._items and self.clock() - self._open_ts >= self.timeout:
            return self.flush()
        return None

    def remaining(self) -> Optional[float]:
        """Seconds until the open batch expires; None if nothing is buffered."""
        if not self._items:
            return None
        return max(0.0, self.timeout - (self.clock() - self._open_ts))

    def flush(self) -> Optional[Batch]:
        if not self._items:
            return None
        out = Batch(self._items, self._open_ts)
        self._items = []
        return out

    def __len__(self) -> int:
        return len(self._items)


def batch(
    stream: Iterable[CleanTuple],
    size: int,
    timeout: float = 0.5,
    clock: Callable[[], float] = time.monotonic,
) -> Iterator[Batch]:
    """Group a stream into batches; an expired batch is emitted on the next arrival
    or at end of stream. The pipeline drives :class:`Batcher` directly so that
    timeouts also fire while the source is idle."""
    b = Batcher(size, timeout, clock)
    for item in stream:
        expired = b.poll()
        if expired is not None:
            yield expired
        full = b.add(item)
        if full is not None:
            yield full
    tail = b.flush()
    if tail is not None:
        yield tail

"""Value types passed between pipeline stages."""

from __future__ import annotations

import enum
import logging
import warnings
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Optional

log = logging.getLogger(__name__)


class Polarity(enum.Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"

    @classmethod
    def parse(cls, value: Any) -> "Polarity":
        if isinstance(value, Polarity):
            return value
        return cls(str(value).lower())


class Strategy(enum.Enum):
    LOCAL = "local"
    GLOBAL = "global"
    HYBRID = "hybrid"


class Pooling(enum.Enum):
    MEAN = "mean"
    MIN = "min"
    MAX = "max"


@dataclass(frozen=True)
class Origin:
    seq: int
    ts: float


@dataclass(frozen=True)
class StreamTuple:
    """One raw text item.

    ``ts`` is in milliseconds since the epoch. ``true_label`` is carried for
    evaluation only; the labelling path receives :class:`CleanTuple`, which
    has no such field.
    """

    seq: int
    ts: float
    text: str
    true_label: Optional[Polarity] = None

    @property
    def origin(self) -> Origin:
        return Origin(self.seq, self.ts)

    def to_dict(self) -> dict:
        return {
            "seq": self.seq,
            "ts": self.ts,
            "text": self.text,
            "true_label": None if self.true_label is None else self.true_label.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StreamTuple":
        label = d.get("true_label")
        return cls(
            seq=int(d["seq"]),
            ts=float(d["ts"]),
            text=d["text"],
            true_label=None if label is None else Polarity.parse(label),
        )


@dataclass(frozen=True)
class CleanTuple:
    origin: Origin
    tokens: tuple[str, ...]

    def to_dict(self) -> dict:
        return {"seq": self.origin.seq, "ts": self.origin.ts, "tokens": list(self.tokens)}

    @classmethod
    def from_dict(cls, d: dict) -> "CleanTuple":
        return cls(Origin(int(d["seq"]), float(d["ts"])), tuple(d["tokens"]))


@dataclass(frozen=True)
class LabelledTuple:
    origin: Origin
    label: Polarity
    sum_pos: float
    sum_neg: float
    known_token_count: int
    emit_ts: float

    def to_dict(self) -> dict:
        return {
            "seq": self.origin.seq,
            "ts": self.origin.ts,
            "emit_ts": self.emit_ts,
            "label": self.label.value,
            "sum_pos": self.sum_pos,
            "sum_neg": self.sum_neg,
            "known_token_count": self.known_token_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LabelledTuple":
        return cls(
            origin=Origin(int(d["seq"]), float(d["ts"])),
            label=Polarity.parse(d["label"]),
            sum_pos=float(d["sum_pos"]),
            sum_neg=float(d["sum_neg"]),
            known_token_count=int(d["known_token_count"]),
            emit_ts=float(d["emit_ts"]),
        )


@dataclass(frozen=True)
class ReferenceTable:
    positive: tuple[str, ...]
    negative: tuple[str, ...]

    def __post_init__(self):
        if not self.positive or not self.negative:
            raise ValueError("reference table needs at least one positive and one negative word")
        overlap = set(self.positive) & set(self.negative)
        if overlap:
            raise ValueError(f"words listed as both positive and negative: {sorted(overlap)}")

    @property
    def words(self) -> frozenset[str]:
        return frozenset(self.positive) | frozenset(self.negative)

    def __len__(self) -> int:
        return len(self.positive) + len(self.negative)

    @classmethod
    def parse(cls, text: str) -> "ReferenceTable":
        """Parse the ``[positive]`` / ``[negative]`` sectioned format."""
        sections: dict[str, list[str]] = {"positive": [], "negative": []}
        current = None
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1].strip().lower()
                if current not in sections:
                    raise ValueError(f"line {lineno}: unknown section [{current}]")
                continue
            if current is None:
                raise ValueError(f"line {lineno}: word outside of a section")
            sections[current].append(line.lower())
        return cls(tuple(sections["positive"]), tuple(sections["negative"]))

    @classmethod
    def load(cls, path: str | Path) -> "ReferenceTable":
        return cls.parse(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def default(cls) -> "ReferenceTable":
        text = resources.files("polarity_stream").joinpath("data/reference.txt").read_text("utf-8")
        return cls.parse(text)

    def dumps(self) -> str:
        return "\n".join(["[positive]", *self.positive, "", "[negative]", *self.negative, ""])

    def to_dict(self) -> dict:
        return {"positive": list(self.positive), "negative": list(self.negative)}

    @classmethod
    def from_dict(cls, d: dict) -> "ReferenceTable":
        return cls(tuple(d["positive"]), tuple(d["negative"]))


@dataclass
class TrendState:
    window_size: int = 1000
    step: float = 0.05
    hysteresis: float = 0.05
    wc_min: float = 0.5
    wc_max: float = 1.5
    wc_pos: float = 1.0
    wc_neg: float = 1.0
    window_pos: int = 0
    window_neg: int = 0

    def __post_init__(self):
        if self.window_size < 1:
            raise ValueError("window_size must be >= 1")
        if self.step < 0:
            raise ValueError("step must be >= 0")
        if not self.wc_min <= 1.0 <= self.wc_max:
            raise ValueError("coefficient bounds must bracket 1.0")

    @property
    def enabled(self) -> bool:
        return self.step > 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrendState":
        return cls(**d)


# Customary ranges; values outside are accepted with a warning.
_USUAL_RANGES = {
    "window": (1, 10),
    "dim": (10, 500),
    "batch_size": (200, 5000),
    "tdw": (200, 2000),
    "merge_period": (20.0, 90.0),
    "min_word_count": (1, 20),
}

# Plain SGD on the skip-gram loss blows up well before alpha=0.5 on typical text.
_ALPHA_STABLE = 0.25

_OPTIONAL = {"merge_every_k", "lru_cap", "subsample"}


@dataclass
class HyperParams:
    window: int = 5
    dim: int = 20
    batch_size: int = 2000
    tdw: int = 1000
    merge_period: float = 30.0
    merge_every_k: Optional[int] = None
    min_word_count: int = 1
    lru_cap: Optional[int] = 100_000
    negative: int = 5
    alpha: float = 0.025
    subsample: Optional[float] = None
    strategy: Strategy = Strategy.HYBRID
    pooling: Pooling = Pooling.MEAN
    ttd_step: float = 0.01
    ttd_hysteresis: float = 0.05
    wc_min: float = 0.9
    wc_max: float = 1.1
    batch_timeout: float = 0.5
    normalize_reference_sums: bool = False
    seed: int = 0

    def __post_init__(self):
        self.strategy = Strategy(self.strategy)
        self.pooling = Pooling(self.pooling)
        self.validate()

    def validate(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name in _OPTIONAL and value is None:
                continue
            if isinstance(value, (enum.Enum, bool)) or f.name == "seed":
                continue
            if f.name in ("ttd_step", "ttd_hysteresis"):
                if value < 0:
                    raise ValueError(f"{f.name} must be >= 0, got {value}")
                continue
            if not value > 0:
                raise ValueError(f"{f.name} must be strictly positive, got {value}")
        if self.wc_min > 1.0 or self.wc_max < 1.0:
            raise ValueError("wc_min <= 1 <= wc_max required")
        for name, (lo, hi) in _USUAL_RANGES.items():
            value = getattr(self, name)
            if not lo <= value <= hi:
                warnings.warn(f"{name}={value} outside the usual range [{lo}, {hi}]", stacklevel=3)
        if self.alpha > _ALPHA_STABLE:
            warnings.warn(f"alpha={self.alpha} above {_ALPHA_STABLE}; training may diverge", stacklevel=3)

    def trend_state(self) -> TrendState:
        return TrendState(
            window_size=self.tdw,
            step=self.ttd_step,
            hysteresis=self.ttd_hysteresis,
            wc_min=self.wc_min,
            wc_max=self.wc_max,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["strategy"] = self.strategy.value
        d["pooling"] = self.pooling.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown hyperparameters: {sorted(unknown)}")
        return cls(**d)


def load_stopwords(path: str | Path | None = None) -> frozenset[str]:
    """One lowercase word per line; ``None`` loads the bundled English list."""
    if path is None:
        text = resources.files("polarity_stream").joinpath("data/stopwords.txt").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return frozenset(w.strip().lower() for w in text.splitlines() if w.strip())


def assign_seq(texts: Iterable[tuple[float, str, Optional[Polarity]]], start: int = 0):
    """Stamp ingestion sequence numbers onto (ts, text, label) rows."""
    for i, (ts, text, label) in enumerate(texts, start):
        yield StreamTuple(seq=i, ts=ts, text=text, true_label=label)

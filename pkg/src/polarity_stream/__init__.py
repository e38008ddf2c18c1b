"""Unsupervised online polarity labelling of text streams.

Each worker trains skip-gram word vectors on the batches it receives and
labels every text by comparing its word centroid against a small table of
positive and negative reference words.
"""

from .core_model import (
    CleanTuple,
    HyperParams,
    LabelledTuple,
    Polarity,
    Pooling,
    ReferenceTable,
    Strategy,
    StreamTuple,
    TrendState,
)
from .embedding import EmbeddingModel
from .pipeline import RunConfig, RunResult, run

__version__ = "0.1.0"

__all__ = [
    "CleanTuple",
    "EmbeddingModel",
    "HyperParams",
    "LabelledTuple",
    "Polarity",
    "Pooling",
    "ReferenceTable",
    "RunConfig",
    "RunResult",
    "Strategy",
    "StreamTuple",
    "TrendState",
    "run",
]

"""Tumbling-window polarity trend detection.

Each window of ``window_size`` labels yields a positive ratio. A ratio above
0.5 + hysteresis raises the positive coefficient by ``step`` and relaxes the
negative one toward 1; below 0.5 - hysteresis does the mirror image; in
between both relax toward 1. Coefficients are clamped to [wc_min, wc_max].
"""

from __future__ import annotations

from typing import Optional

from .core_model import Polarity, TrendState


def _toward_one(x: float, step: float) -> float:
    if x > 1.0:
        return max(1.0, x - step)
    if x < 1.0:
        return min(1.0, x + step)
    return x


def _clamp(x: float, lo: float, hi: float) -> float:
    return min(hi, max(lo, x))


def roll(state: TrendState, pos_ratio: float) -> TrendState:
    if not 0.0 <= pos_ratio <= 1.0:
        raise ValueError(f"pos_ratio must be in [0, 1], got {pos_ratio}")
    step, h = state.step, state.hysteresis
    if pos_ratio > 0.5 + h:
        wc_pos = state.wc_pos + step
        wc_neg = _toward_one(state.wc_neg, step)
    elif pos_ratio < 0.5 - h:
        wc_neg = state.wc_neg + step
        wc_pos = _toward_one(state.wc_pos, step)
    else:
        wc_pos = _toward_one(state.wc_pos, step)
        wc_neg = _toward_one(state.wc_neg, step)
    state.wc_pos = _clamp(wc_pos, state.wc_min, state.wc_max)
    state.wc_neg = _clamp(wc_neg, state.wc_min, state.wc_max)
    return state


def record(state: TrendState, label: Polarity) -> Optional[float]:
    """Count a label; when the window fills, roll the coefficients and reset.

    Returns the closed window's positive ratio, or None if it is still open.
    """
    if label is Polarity.POSITIVE:
        state.window_pos += 1
    else:
        state.window_neg += 1
    total = state.window_pos + state.window_neg
    if total < state.window_size:
        return None
    ratio = state.window_pos / total
    roll(state, ratio)
    state.window_pos = 0
    state.window_neg = 0
    return ratio


def majority(state: TrendState) -> Optional[Polarity]:
    """Majority label of the open window; None when empty or tied."""
    if state.window_pos > state.window_neg:
        return Polarity.POSITIVE
    if state.window_neg > state.window_pos:
        return Polarity.NEGATIVE
    return None

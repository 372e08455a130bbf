"""Vectorized, strictly causal indicator computations.

Every function returns a float64 array aligned to the input where element t
depends only on bars [0, t]. Bars with insufficient history are NaN unless
min_periods relaxes the window (the unsafe mode used to replay pre-fix
behavior in drift fixtures).
"""
from __future__ import annotations

import numpy as np
import pandas as pd


def _roll(x: np.ndarray, window: int, min_periods: int):
    return pd.Series(x).rolling(window, min_periods=min_periods)


def sma(x: np.ndarray, window: int, min_periods: int | None = None) -> np.ndarray:
    mp = window if min_periods is None else min_periods
    return _roll(x, window, mp).mean().to_numpy()


def rolling_std(x: np.ndarray, window: int, min_periods: int | None = None) -> np.ndarray:
    mp = window if min_periods is None else min_periods
    return _roll(x, window, mp).std(ddof=1).to_numpy()


def rolling_mean(x: np.ndarray, window: int, min_periods: int) -> np.ndarray:
    return _roll(x, window, min_periods).mean().to_numpy()


def shift(x: np.ndarray, k: int) -> np.ndarray:
    """Value k bars earlier; leading bars NaN. k must be >= 0 (guarded upstream)."""
    if k == 0:
        return np.asarray(x, dtype=np.float64).copy()
    out = np.full(len(x), np.nan)
    out[k:] = x[:-k]
    return out

def rsi(close: np.ndarray, window: int, min_periods: int | None = None) -> np.ndarray:
    """Relative strength index over rolling-mean gains/losses.

    Uses simple moving averages of up/down moves (Cutler's variant) so the
    value at t is an exact function of the last `window` price changes.
    """
    mp = window if min_periods is None else min_periods
    delta = np.diff(close, prepend=np.nan)
    gain = np.where(delta > 0, delta, 0.0)
    loss = np.where(delta < 0, -delta, 0.0)
    gain[0] = np.nan
    loss[0] = np.nan
    avg_gain = _roll(gain, window, mp).mean().to_numpy()
    avg_loss = _roll(loss, window, mp).mean().to_numpy()
    out = np.full(len(close), np.nan)
    with np.errstate(invalid="ignore", divide="ignore"):
        valid = ~np.isnan(avg_gain) & ~np.isnan(avg_loss)
        denom = avg_gain + avg_loss
        flat = valid & (denom == 0.0)
        active = valid & (denom > 0.0)
        out[active] = 100.0 * avg_gain[active] / denom[active]
        out[flat] = 50.0
    return out


def ema(x: np.ndarray, span: int) -> np.ndarray:
    return pd.Series(x).ewm(span=span, adjust=False).mean().to_numpy()


def macd_histogram(close: np.ndarray, fast: int, slow: int, signal: int) -> np.ndarray:
    """MACD line minus its signal line (the histogram)."""
    line = ema(close, fast) - ema(close, slow)
    return line - pd.Series(line).ewm(span=signal, adjust=False).mean().to_numpy()


def true_range(high: np.ndarray, low: np.ndarray, close: np.ndarray) -> np.ndarray:
    prev_close = shift(close, 1)
    tr = np.maximum(high - low, np.maximum(np.abs(high - prev_close), np.abs(low - prev_close)))
    tr[0] = high[0] - low[0]
    return tr


def atr(high, low, close, window: int, min_periods: int | None = None) -> np.ndarray:
    mp = window if min_periods is None else min_periods
    return _roll(true_range(high, low, close), window, mp).mean().to_numpy()


def donchian_high(high: np.ndarray, window: int, min_periods: int | None = None) -> np.ndarray:
    """Highest high of the previous `window` bars, excluding the current bar.

    The exclusion keeps breakout tests like close > donchian_high(N)
    satisfiable on the breakout bar itself.
    """
    mp = window if min_periods is None else min_periods
    return shift(_roll(high, window, mp).max().to_numpy(), 1)


def donchian_low(low: np.ndarray, window: int, min_periods: int | None = None) -> np.ndarray:
    mp = window if min_periods is None else min_periods
    return shift(_roll(low, window, mp).min().to_numpy(), 1)


def cross_above(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """True at t iff a[t] > b[t] and a[t-1] <= b[t-1]; false where NaN is involved."""
    with np.errstate(invalid="ignore"):
        above = a > b
        prev_ok = shift(a, 1) <= shift(b, 1)
    return above & prev_ok


def cross_below(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        below = a < b
        prev_ok = shift(a, 1) >= shift(b, 1)
    return below & prev_ok

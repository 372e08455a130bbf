"""OHLCV ingestion, frozen time splits, cleaning, and checksums.

Series are immutable after load/clean: arrays are marked read-only so they
can be shared across concurrent runs. All timestamps are UTC.
"""
from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from ..dsl import BarArrays

CSV_HEADER = ("timestamp", "open", "high", "low", "close", "volume")
DAY_NS = 86_400_000_000_000
MINUTE_NS = 60_000_000_000


class DataError(ValueError):
    """Malformed input data (schema, timestamps, values)."""


@dataclass(frozen=True)
class Provenance:
    source: str = ""
    cleaning_ops: tuple = ()
    checksum: str | None = None


@dataclass(frozen=True)
class OhlcvSeries:
    symbol: str
    timestamps: np.ndarray  # datetime64[ns], strictly increasing
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    volume: np.ndarray
    frequency: str = "daily"  # daily | minute
    provenance: Provenance = field(default_factory=Provenance)

    def __post_init__(self):
        n = len(self.timestamps)
        for name in ("open", "high", "low", "close", "volume"):
            if len(getattr(self, name)) != n:
                raise DataError(f"column {name} has {len(getattr(self, name))} rows, expected {n}")
        if n > 1:
            deltas = np.diff(self.timestamps.astype("int64"))
            bad = np.flatnonzero(deltas <= 0)
            if bad.size:
                raise DataError(
                    f"timestamps not strictly increasing at row {int(bad[0]) + 2}"
                )
        for name in ("timestamps", "open", "high", "low", "close", "volume"):
            getattr(self, name).flags.writeable = False

    def __len__(self) -> int:
        return len(self.timestamps)

    def bar_arrays(self) -> BarArrays:
        return BarArrays(
            open=self.open, high=self.high, low=self.low,
            close=self.close, volume=self.volume,
        )

    def with_provenance_op(self, op: str) -> "OhlcvSeries":
        prov = replace(
            self.provenance, cleaning_ops=self.provenance.cleaning_ops + (op,)
        )
        return replace(self, provenance=prov)


def _parse_timestamp(text: str, row: int) -> np.datetime64:
    raw = text.strip()
    try:
        dt = datetime.fromisoformat(raw.replace("Z", "+00:00"))
    except ValueError as exc:
        raise DataError(f"unparseable timestamp at row {row}: {raw!r} ({exc})") from None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    dt = dt.astimezone(timezone.utc).replace(tzinfo=None)
    return np.datetime64(dt, "ns")


def format_timestamp(ts: np.datetime64) -> str:
    return str(np.datetime_as_string(ts, unit="s")) + "Z"


def _format_value(x: float) -> str:
    # shortest round-trip form: any representable perturbation changes bytes
    return repr(float(x))


def infer_frequency(timestamps: np.ndarray) -> str:
    if len(timestamps) < 2:
        return "daily"
    median = float(np.median(np.diff(timestamps.astype("int64"))))
    return "minute" if median <= 90 * 1e9 else "daily"


def load_csv(path, symbol: str | None = None, frequency: str | None = None) -> OhlcvSeries:
    """Load an OHLCV CSV with the exact header
    timestamp,open,high,low,close,volume; timestamps normalized to UTC."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError("empty file: no header row") from None
        for col in CSV_HEADER:
            if col not in header:
                raise DataError(f"missing column: {col}")
        idx = {col: header.index(col) for col in CSV_HEADER}
        ts_list: list = []
        cols: dict = {c: [] for c in CSV_HEADER[1:]}
        for row_num, row in enumerate(reader, start=2):
            if not row:
                continue
            ts_list.append(_parse_timestamp(row[idx["timestamp"]], row_num))
            for c in CSV_HEADER[1:]:
                try:
                    cols[c].append(float(row[idx[c]]))
                except ValueError:
                    raise DataError(
                        f"unparseable {c} at row {row_num}: {row[idx[c]]!r}"
                    ) from None
    timestamps = np.array(ts_list, dtype="datetime64[ns]")
    series = OhlcvSeries(
        symbol=symbol or path.stem,
        timestamps=timestamps,
        open=np.array(cols["open"]),
        high=np.array(cols["high"]),
        low=np.array(cols["low"]),
        close=np.array(cols["close"]),
        volume=np.array(cols["volume"]),
        frequency=frequency or infer_frequency(timestamps),
        provenance=Provenance(source=str(path)),
    )
    digest = checksum(series)
    return replace(series, provenance=replace(series.provenance, checksum=digest))


def serialize_csv(series: OhlcvSeries) -> bytes:
    """Canonical CSV bytes: exact header, ISO-8601 UTC timestamps, 10
    significant digits, LF line endings. checksum() hashes these bytes."""
    buf = io.StringIO()
    buf.write(",".join(CSV_HEADER) + "\n")
    for i in range(len(series)):
        buf.write(
            ",".join(
                (
                    format_timestamp(series.timestamps[i]),
                    _format_value(series.open[i]),
                    _format_value(series.high[i]),
                    _format_value(series.low[i]),
                    _format_value(series.close[i]),
                    _format_value(series.volume[i]),
                )
            )
            + "\n"
        )
    return buf.getvalue().encode("utf-8")


def save_csv(series: OhlcvSeries, path) -> None:
    Path(path).write_bytes(serialize_csv(series))


def checksum(series: OhlcvSeries) -> str:
    return hashlib.sha256(serialize_csv(series)).hexdigest()


@dataclass(frozen=True)
class TimeSplit:
    """Left-closed, right-open interval [start, end)."""

    start: np.datetime64
    end: np.datetime64
    label: str

    def __post_init__(self):
        if not self.start < self.end:
            raise DataError(f"split start must precede end: {self.start} >= {self.end}")


def make_split(start: str, end: str, label: str) -> TimeSplit:
    return TimeSplit(
        start=np.datetime64(start, "ns"), end=np.datetime64(end, "ns"), label=label
    )


FROZEN_SPLITS = {
    "train": make_split("2024-01-01", "2025-01-01", "train_dev"),
    "test": make_split("2025-01-01", "2026-01-01", "test"),
}


def apply_split(series: OhlcvSeries, split: TimeSplit) -> OhlcvSeries:
    """Retain exactly the bars with split.start <= t < split.end."""
    mask = (series.timestamps >= split.start) & (series.timestamps < split.end)
    out = OhlcvSeries(
        symbol=series.symbol,
        timestamps=series.timestamps[mask].copy(),
        open=series.open[mask].copy(),
        high=series.high[mask].copy(),
        low=series.low[mask].copy(),
        close=series.close[mask].copy(),
        volume=series.volume[mask].copy(),
        frequency=series.frequency,
        provenance=series.provenance,
    )
    op = f"split:{split.label}"
    if len(out) == 0:
        op += ":empty"
    return out.with_provenance_op(op)


@dataclass(frozen=True)
class CleaningPolicy:
    outlier_rule: str = "clip_10x_mean"  # or winsorize_q999
    fill_daily_gaps: bool = True
    clip_multiple: float = 10.0
    quantile: float = 0.999


def _trailing_mean_window(frequency: str) -> int:
    return 250 if frequency == "daily" else 1440


def clean(series: OhlcvSeries, policy: CleaningPolicy = CleaningPolicy()) -> OhlcvSeries:
    """Policy-driven cleaning; all applied ops recorded in provenance.

    Daily series get calendar gaps forward-filled; minute gaps are preserved
    (exchange downtime is part of the data). Outliers are clipped against a
    trailing mean of prior closes so cleaning never looks ahead.
    """
    import pandas as pd

    ops: list = []
    ts = series.timestamps
    o, h, l, c, v = (series.open.copy(), series.high.copy(), series.low.copy(),
                     series.close.copy(), series.volume.copy())

    if series.frequency == "daily" and policy.fill_daily_gaps and len(series) > 1:
        day = np.timedelta64(1, "D").astype("timedelta64[ns]")
        offsets = (ts - ts[0]).astype("int64")
        if np.any(offsets % day.astype("int64") != 0):
            # bars are off the daily lattice of the first bar; do not guess
            ops.append("forward_fill_skipped:nonuniform_times")
        else:
            n_days = int(offsets[-1] // day.astype("int64")) + 1
            full = ts[0] + np.arange(n_days) * day
            if n_days > len(ts):
                pos = np.searchsorted(ts, full)
                present = (pos < len(ts)) & (ts[np.minimum(pos, len(ts) - 1)] == full)
                src = np.zeros(n_days, dtype=int)
                src[present] = pos[present]
                # carry the last real bar index forward into the gaps
                carry = np.where(present, np.arange(n_days), -1)
                carry = np.maximum.accumulate(carry)
                filled_from = np.where(present, src, src[carry])
                new_c = c[filled_from]
                new_o = np.where(present, o[filled_from], new_c)
                new_h = np.where(present, h[filled_from], new_c)
                new_l = np.where(present, l[filled_from], new_c)
                new_v = np.where(present, v[filled_from], 0.0)
                ops.append(f"forward_fill_calendar_gaps:{n_days - len(ts)}")
                ts, o, h, l, c, v = full, new_o, new_h, new_l, new_c, new_v
            else:
                ops.append("forward_fill_calendar_gaps:0")
    elif series.frequency == "minute":
        ops.append("gaps_preserved")

    if policy.outlier_rule == "clip_10x_mean":
        window = _trailing_mean_window(series.frequency)
        prior_mean = (
            pd.Series(c).shift(1).rolling(window, min_periods=1).mean().to_numpy()
        )
        cap = policy.clip_multiple * prior_mean
        cap[np.isnan(cap)] = np.inf
        clipped = 0
        for arr in (o, h, l, c):
            over = arr > cap
            clipped += int(over.sum())
            arr[over] = cap[over]
        ops.append(f"clip_10x_trailing_mean:{clipped}")
    elif policy.outlier_rule == "winsorize_q999":
        cap = pd.Series(c).shift(1).expanding(min_periods=1).quantile(policy.quantile)
        cap = cap.to_numpy()
        cap[np.isnan(cap)] = np.inf
        clipped = 0
        for arr in (o, h, l, c):
            over = arr > cap
            clipped += int(over.sum())
            arr[over] = cap[over]
        ops.append(f"winsorize_q{policy.quantile:g}:{clipped}")
    else:
        raise DataError(f"unknown outlier rule {policy.outlier_rule!r}")

    neg = v < 0
    if neg.any():
        v[neg] = 0.0
        ops.append(f"volume_floor_zero:{int(neg.sum())}")

    h = np.maximum(h, np.maximum(o, c))
    l = np.minimum(l, np.minimum(o, c))

    out = OhlcvSeries(
        symbol=series.symbol,
        timestamps=ts,
        open=o, high=h, low=l, close=c, volume=v,
        frequency=series.frequency,
        provenance=replace(
            series.provenance,
            cleaning_ops=series.provenance.cleaning_ops + tuple(ops),
        ),
    )
    return replace(out, provenance=replace(out.provenance, checksum=checksum(out)))


def from_arrays(
    symbol: str,
    timestamps: np.ndarray,
    open_: np.ndarray,
    high: np.ndarray,
    low: np.ndarray,
    close: np.ndarray,
    volume: np.ndarray,
    frequency: str,
    source: str = "synthetic",
) -> OhlcvSeries:
    return OhlcvSeries(
        symbol=symbol,
        timestamps=np.asarray(timestamps, dtype="datetime64[ns]"),
        open=np.asarray(open_, dtype=np.float64),
        high=np.asarray(high, dtype=np.float64),
        low=np.asarray(low, dtype=np.float64),
        close=np.asarray(close, dtype=np.float64),
        volume=np.asarray(volume, dtype=np.float64),
        frequency=frequency,
        provenance=Provenance(source=source),
    )

"""Deterministic synthetic series: micro-scenarios and stress data.

The five 50-bar micro-scenarios are engineered around the reference
mean-reversion card (band window 20, width 2.0, stop 10%): entry at bar 25 /
exit at bar 35 on the clean path, a stop-loss path, a warm-up trap that only
bites partial-window evaluation, a no-trade path, and a gap-down open.
Generation is a pure function of (kind, params, seed); bars are built from
closed-form sequences so the bytes are identical on every platform.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import OhlcvSeries, from_arrays

SCENARIO_KINDS = (
    "clean_golden_cross",
    "stop_loss_trigger",
    "nan_period",
    "flat_market",
    "gap_scenario",
)

SCENARIO_LENGTH = 50
_BASE_TS = np.datetime64("2024-01-01T00:00:00", "ns")


@dataclass(frozen=True)
class SyntheticScenario:
    kind: str
    length: int = SCENARIO_LENGTH
    params: tuple = ()
    seed: int = 42

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}")


def standard_scenarios(seed: int = 42) -> list:
    return [SyntheticScenario(kind=k, seed=seed) for k in SCENARIO_KINDS]


def _ramp(start: float, step: float, n: int) -> list:
    return [start + step * i for i in range(n)]


def _closes_clean_golden_cross() -> list:
    closes = _ramp(100.0, 0.1, 20)  # bars 0..19
    closes += [102.0] * 5  # 20..24
    closes += [97.0]  # 25: drop through the lower band
    closes += [97.4, 97.8, 98.2, 98.6, 99.0, 99.3, 99.5, 99.7, 99.9]  # 26..34
    closes += [102.0]  # 35: back above the middle band
    closes += _ramp(102.05, 0.05, 14)  # 36..49
    return closes


def _closes_stop_loss_trigger() -> list:
    closes = _ramp(100.0, 0.1, 20)
    closes += [102.0] * 5
    closes += [97.0]  # 25: entry
    closes += [95.0, 93.0, 91.0, 89.5, 85.4]  # 26..30: 85.4 breaches the 10% stop
    closes += _ramp(86.0, 0.6, 19)  # 31..49: recovery, no re-entry
    return closes


def _closes_nan_period() -> list:
    closes = [100.0] * 10  # 0..9: flat, bands undefined
    closes += [98.0, 99.5, 100.2]  # 10..12: dip that only partial windows trade
    closes += _ramp(100.3, 0.1, 7)  # 13..19
    closes += _ramp(101.0, 0.05, 9)  # 20..28
    closes += [101.45]  # 29
    closes += [99.3]  # 30: genuine band cross, first valid entry
    closes += [99.5, 99.7, 99.9, 100.0, 100.1, 100.2, 100.3, 100.35]  # 31..38
    closes += [101.5]  # 39: exit at the middle band
    closes += _ramp(101.52, 0.02, 10)  # 40..49
    return closes


def _closes_flat_market() -> list:
    cycle = (0.0, 0.3, 0.5, 0.3, 0.0, -0.3, -0.5, -0.3)
    return [100.0 + cycle[t % len(cycle)] for t in range(SCENARIO_LENGTH)]


def _closes_gap_scenario() -> list:
    closes = _ramp(100.0, 0.1, 20)
    closes += [102.0] * 5
    closes += [96.0]  # 25: closes below the band after gapping down at the open
    closes += [96.4, 96.8, 97.2, 97.6, 98.0, 98.3, 98.6, 98.8, 99.0, 99.2, 99.4]  # 26..36
    closes += [102.0]  # 37: exit
    closes += _ramp(102.05, 0.05, 12)  # 38..49
    return closes


_BUILDERS = {
    "clean_golden_cross": _closes_clean_golden_cross,
    "stop_loss_trigger": _closes_stop_loss_trigger,
    "nan_period": _closes_nan_period,
    "flat_market": _closes_flat_market,
    "gap_scenario": _closes_gap_scenario,
}

# explicit gap-down open on bar 25 of the gap scenario
_GAP_BAR, _GAP_OPEN = 25, 94.0


def gen_micro_scenario(scenario: SyntheticScenario) -> OhlcvSeries:
    closes = np.array(_BUILDERS[scenario.kind](), dtype=np.float64)
    if len(closes) != scenario.length:
        raise ValueError(
            f"{scenario.kind} builds {len(closes)} bars, scenario wants {scenario.length}"
        )
    opens = np.empty_like(closes)
    opens[0] = closes[0]
    opens[1:] = closes[:-1]
    if scenario.kind == "gap_scenario":
        opens[_GAP_BAR] = _GAP_OPEN
    high = np.maximum(opens, closes) + 0.25
    low = np.minimum(opens, closes) - 0.25
    volume = np.full(len(closes), 10_000.0)
    timestamps = _BASE_TS + np.arange(len(closes)) * np.timedelta64(1, "D").astype(
        "timedelta64[ns]"
    )
    return from_arrays(
        symbol="SYNTH",
        timestamps=timestamps,
        open_=opens,
        high=high,
        low=low,
        close=closes,
        volume=volume,
        frequency="daily",
        source=f"micro_scenario:{scenario.kind}:seed={scenario.seed}",
    )


def gen_random_walk(
    n_bars: int,
    seed: int,
    frequency: str = "minute",
    symbol: str = "SYNTH",
    start: str = "2024-01-01T00:00:00",
    start_price: float = 100.0,
    vol: float = 0.0008,
    drift: float = 0.0,
) -> OhlcvSeries:
    """Seeded geometric random walk for stress and determinism testing."""
    rng = np.random.Generator(np.random.PCG64(seed))
    steps = rng.normal(drift, vol, n_bars)
    closes = start_price * np.exp(np.cumsum(steps))
    opens = np.empty_like(closes)
    opens[0] = start_price
    opens[1:] = closes[:-1]
    wick = np.abs(rng.normal(0.0, vol, n_bars)) * closes
    high = np.maximum(opens, closes) + wick
    low = np.minimum(opens, closes) - wick
    volume = rng.integers(1_000, 100_000, n_bars).astype(np.float64)
    step = np.timedelta64(1, "m") if frequency == "minute" else np.timedelta64(1, "D")
    timestamps = np.datetime64(start, "ns") + np.arange(n_bars) * step.astype(
        "timedelta64[ns]"
    )
    return from_arrays(
        symbol=symbol,
        timestamps=timestamps,
        open_=opens,
        high=high,
        low=low,
        close=closes,
        volume=volume,
        frequency=frequency,
        source=f"random_walk:seed={seed}",
    )

#!/usr/bin/env python3
"""Regenerate the bundled fixtures: 12 strategy cards, two drift-pair cards,
the five frozen micro-scenario CSVs with checksums, and a two-year daily
sample spanning the frozen splits.

Run from the repository root:  python scripts/make_fixtures.py
"""
from __future__ import annotations

import copy
import json
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from driftgate.cards import StrategyCard, validate_schema  # noqa: E402
from driftgate.data import checksum, save_csv  # noqa: E402
from driftgate.data.scenarios import (  # noqa: E402
    SCENARIO_KINDS,
    SyntheticScenario,
    gen_micro_scenario,
    gen_random_walk,
)

FIXTURES = ROOT / "src" / "driftgate" / "fixtures"

TRADE_COLUMNS = [
    "entry_datetime", "exit_datetime", "side", "entry_price", "exit_price",
    "quantity", "gross_pnl", "pnl", "reason",
]
AUDIT_BASE = ["datetime", "close"]
AUDIT_TAIL = ["signal", "position_state", "equity", "constraint_check", "event_type", "message"]


def card(name, family, entry, exit_, params, indicators, *, multi_asset=False,
         intraday=False, assets=("SYNTH",), max_leverage=1.0):
    audit_cols = AUDIT_BASE + list(indicators) + AUDIT_TAIL
    return {
        "card_version": "1",
        "strategy_name": name,
        "strategy_family": family,
        "entry_rule": entry,
        "exit_rule": exit_,
        "position_sizing_rule": "all_in_all_out",
        "parameters": params,
        "constraints": {
            "max_leverage": max_leverage,
            "allowed_assets": list(assets),
            "execution_timing": "bar_close",
        },
        "audit_requirements": {
            "trade_log_columns": TRADE_COLUMNS,
            "audit_log_columns": audit_cols,
            "indicators": indicators,
        },
        "meta": {"multi_asset": multi_asset, "intraday": intraday},
    }


def integer(v):
    return {"type": "integer", "value": v}


def real(v):
    return {"type": "real", "value": v}


def percent(v):
    return {"type": "percent", "value": v}


CARDS = [
    card(
        "double_ma_crossover", "trend",
        "cross_above(sma(close, $N_short), sma(close, $N_long))",
        "cross_below(sma(close, $N_short), sma(close, $N_long))",
        {"N_short": integer(5), "N_long": integer(20)},
        {
            "MA_short_t": "sma(close, $N_short)",
            "MA_long_t": "sma(close, $N_long)",
        },
    ),
    card(
        "turtle_donchian", "trend",
        "close > donchian_high($N_entry)",
        "close < donchian_low($N_exit)",
        {
            "N_entry": integer(20),
            "N_exit": integer(10),
            "atr_N": integer(14),
            "stop_loss_pct": percent("10%"),
        },
        {
            "DC_high_t": "donchian_high($N_entry)",
            "DC_low_t": "donchian_low($N_exit)",
            "ATR_t": "atr($atr_N)",
        },
    ),
    card(
        "rsi_macd_trend", "trend",
        "rsi($rsi_N) > $rsi_entry and macd($macd_fast, $macd_slow, $macd_signal) > 0",
        "rsi($rsi_N) < $rsi_exit or macd($macd_fast, $macd_slow, $macd_signal) < 0",
        {
            "rsi_N": integer(14),
            "rsi_entry": real(55.0),
            "rsi_exit": real(45.0),
            "macd_fast": integer(12),
            "macd_slow": integer(26),
            "macd_signal": integer(9),
        },
        {
            "RSI_t": "rsi($rsi_N)",
            "MACD_hist_t": "macd($macd_fast, $macd_slow, $macd_signal)",
        },
    ),
    card(
        "bollinger_mean_reversion", "mean_reversion",
        "cross_below(close, sma(close, $lookback_N) - $multiplier_k * std(close, $lookback_N))",
        "close >= sma(close, $lookback_N)",
        {
            "lookback_N": integer(20),
            "multiplier_k": real(2.0),
            "stop_loss_pct": percent("10%"),
        },
        {
            "MB_t": "sma(close, $lookback_N)",
            "UB_t": "sma(close, $lookback_N) + $multiplier_k * std(close, $lookback_N)",
            "LB_t": "sma(close, $lookback_N) - $multiplier_k * std(close, $lookback_N)",
        },
    ),
    card(
        "dual_thrust", "intraday",
        "close > shift(close, 1) + $k1 * (shift(high, 1) - shift(low, 1))",
        "close < shift(close, 1) - $k2 * (shift(high, 1) - shift(low, 1))",
        {"k1": real(0.5), "k2": real(0.5), "stop_loss_pct": percent("5%")},
        {
            "THRUST_UP_t": "shift(close, 1) + $k1 * (shift(high, 1) - shift(low, 1))",
            "THRUST_DN_t": "shift(close, 1) - $k2 * (shift(high, 1) - shift(low, 1))",
        },
        intraday=True,
    ),
    card(
        "r_breaker", "intraday",
        "close > (shift(high, 1) + shift(low, 1) + shift(close, 1)) / 3"
        " + $k_break * (shift(high, 1) - shift(low, 1))",
        "close < (shift(high, 1) + shift(low, 1) + shift(close, 1)) / 3"
        " - $k_rev * (shift(high, 1) - shift(low, 1))",
        {"k_break": real(0.35), "k_rev": real(0.25), "stop_loss_pct": percent("5%")},
        {
            "PIVOT_t": "(shift(high, 1) + shift(low, 1) + shift(close, 1)) / 3",
        },
        intraday=True,
    ),
    card(
        "volatility_targeting", "portfolio",
        "std(close, $vol_N) / sma(close, $vol_N) < $vol_target and close > sma(close, $trend_N)",
        "std(close, $vol_N) / sma(close, $vol_N) > $vol_exit or close < sma(close, $trend_N)",
        {
            "vol_N": integer(20),
            "trend_N": integer(50),
            "vol_target": real(0.02),
            "vol_exit": real(0.03),
        },
        {
            "VOL_t": "std(close, $vol_N) / sma(close, $vol_N)",
            "TREND_t": "sma(close, $trend_N)",
        },
    ),
    card(
        "spread_trading", "spread_arb",
        "(close - sma(close, $spread_N)) / std(close, $spread_N) < -$z_entry",
        "(close - sma(close, $spread_N)) / std(close, $spread_N) > -$z_exit",
        {"spread_N": integer(20), "z_entry": real(2.0), "z_exit": real(0.5)},
        {"Z_t": "(close - sma(close, $spread_N)) / std(close, $spread_N)"},
        multi_asset=True, assets=("SYNTH_A", "SYNTH_B"),
    ),
    card(
        "calendar_spread", "spread_arb",
        "(sma(close, $near_N) - sma(close, $far_N)) / std(close, $near_N) < -$z_entry",
        "(sma(close, $near_N) - sma(close, $far_N)) / std(close, $near_N) > -$z_exit",
        {
            "near_N": integer(20),
            "far_N": integer(60),
            "z_entry": real(2.0),
            "z_exit": real(0.5),
            "roll_days": integer(5),
            "max_hold": integer(30),
        },
        {"CAL_Z_t": "(sma(close, $near_N) - sma(close, $far_N)) / std(close, $near_N)"},
        multi_asset=True, assets=("SYNTH_NEAR", "SYNTH_FAR"),
    ),
    card(
        "pairs_zscore", "spread_arb",
        "(close - sma(close, $z_window)) / std(close, $z_window) < -$z_entry",
        "(close - sma(close, $z_window)) / std(close, $z_window) > -$z_exit"
        " or (close - sma(close, $z_window)) / std(close, $z_window) < -$stop_z",
        {
            "z_window": integer(60),
            "hedge_ratio": real(1.0),
            "z_entry": real(2.0),
            "z_exit": real(0.25),
            "stop_z": real(4.0),
        },
        {"PAIR_Z_t": "(close - sma(close, $z_window)) / std(close, $z_window)"},
        multi_asset=True, assets=("SYNTH_A", "SYNTH_B"),
    ),
    card(
        "cross_asset_momentum", "portfolio",
        "close / shift(close, $momentum_N) - 1 > $entry_threshold",
        "close / shift(close, $momentum_N) - 1 < $exit_threshold",
        {
            "momentum_N": integer(60),
            "entry_threshold": real(0.02),
            "exit_threshold": real(0.0),
        },
        {"MOM_t": "close / shift(close, $momentum_N) - 1"},
        multi_asset=True, assets=("SYNTH_A", "SYNTH_B", "SYNTH_C"),
    ),
    card(
        "index_enhancement", "portfolio",
        "close / shift(close, $alpha_N) - 1 > $alpha_min and rsi($rsi_N) < $rsi_max",
        "close / shift(close, $alpha_N) - 1 < 0 or rsi($rsi_N) > $rsi_max",
        {
            "alpha_N": integer(20),
            "alpha_min": real(0.01),
            "rsi_N": integer(14),
            "rsi_max": real(70.0),
            "max_positions": integer(5),
            "rebalance_N": integer(20),
        },
        {
            "ALPHA_t": "close / shift(close, $alpha_N) - 1",
            "RSI_t": "rsi($rsi_N)",
        },
        multi_asset=True, assets=("SYNTH_IDX", "SYNTH_A", "SYNTH_B"),
    ),
]


def drift_variants(bollinger: dict) -> dict:
    # threshold 10 actually suppresses entries on the micro-scenarios, so the
    # filter shows up in layer-2 traces as well as the layer-1 hash
    case_b = copy.deepcopy(bollinger)
    case_b["entry_rule"] += " and rsi($rsi_N) < $rsi_threshold"
    case_b["parameters"]["rsi_N"] = integer(14)
    case_b["parameters"]["rsi_threshold"] = real(10.0)

    param_drift = copy.deepcopy(bollinger)
    param_drift["parameters"]["lookback_N"] = integer(30)
    return {"bollinger_case_b": case_b, "bollinger_param_drift": param_drift}


def main() -> None:
    cards_dir = FIXTURES / "cards"
    data_dir = FIXTURES / "data"
    cards_dir.mkdir(parents=True, exist_ok=True)
    data_dir.mkdir(parents=True, exist_ok=True)

    by_name = {}
    for spec in CARDS:
        by_name[spec["strategy_name"]] = spec
        violations = validate_schema(StrategyCard.from_dict(spec))
        if violations:
            raise SystemExit(f"{spec['strategy_name']}: {violations}")
        (cards_dir / f"{spec['strategy_name']}.json").write_text(
            json.dumps(spec, indent=2) + "\n"
        )
        print(f"card {spec['strategy_name']}")

    for name, spec in drift_variants(by_name["bollinger_mean_reversion"]).items():
        violations = validate_schema(StrategyCard.from_dict(spec))
        if violations:
            raise SystemExit(f"{name}: {violations}")
        (cards_dir / f"{name}.json").write_text(json.dumps(spec, indent=2) + "\n")
        print(f"card {name}")

    for kind in SCENARIO_KINDS:
        series = gen_micro_scenario(SyntheticScenario(kind=kind))
        save_csv(series, data_dir / f"{kind}.csv")
        digest = checksum(series)
        (data_dir / f"{kind}.sha256").write_text(digest + "\n")
        print(f"data {kind}: {digest[:16]}...")

    daily = gen_random_walk(
        730, seed=7, frequency="daily", symbol="SYNTH",
        start="2024-01-01T00:00:00", vol=0.01,
    )
    save_csv(daily, data_dir / "daily_2024_2025.csv")
    (data_dir / "daily_2024_2025.sha256").write_text(checksum(daily) + "\n")
    print(f"data daily_2024_2025: {checksum(daily)[:16]}...")


if __name__ == "__main__":
    main()

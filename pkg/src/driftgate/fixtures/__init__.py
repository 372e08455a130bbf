"""Bundled fixtures: the 12-card strategy corpus, drift-pair cards, and
frozen micro-scenario data with checksums."""
from __future__ import annotations

import json
from pathlib import Path

from ..cards import StrategyCard

_ROOT = Path(__file__).parent

CARD_NAMES = (
    "double_ma_crossover",
    "turtle_donchian",
    "rsi_macd_trend",
    "bollinger_mean_reversion",
    "dual_thrust",
    "r_breaker",
    "volatility_targeting",
    "spread_trading",
    "calendar_spread",
    "pairs_zscore",
    "cross_asset_momentum",
    "index_enhancement",
)

DRIFT_CARD_NAMES = (
    "bollinger_case_b",  # unapproved RSI filter added to the entry rule
    "bollinger_param_drift",  # lookback window 20 -> 30
)


def card_path(name: str) -> Path:
    return _ROOT / "cards" / f"{name}.json"


def data_path(name: str) -> Path:
    return _ROOT / "data" / f"{name}.csv"


def load_fixture_card(name: str) -> StrategyCard:
    return StrategyCard.from_dict(json.loads(card_path(name).read_text()))


def load_fixture_card_bytes(name: str) -> bytes:
    return card_path(name).read_bytes()


def executable_card_names() -> list:
    """Single-asset cards the engine can run; multi-asset cards parse only."""
    return [n for n in CARD_NAMES if not load_fixture_card(n).meta.multi_asset]

import json

import numpy as np
import pytest

from driftgate.cards import StrategyCard
from driftgate.data import from_arrays
from driftgate.data.scenarios import SyntheticScenario, gen_micro_scenario
from driftgate.fixtures import card_path, load_fixture_card


@pytest.fixture(scope="session")
def bollinger_card() -> StrategyCard:
    return load_fixture_card("bollinger_mean_reversion")


@pytest.fixture(scope="session")
def bollinger_dict() -> dict:
    return json.loads(card_path("bollinger_mean_reversion").read_text())


@pytest.fixture(scope="session")
def case_b_card() -> StrategyCard:
    return load_fixture_card("bollinger_case_b")


@pytest.fixture(scope="session")
def scenario_series() -> dict:
    return {
        kind: gen_micro_scenario(SyntheticScenario(kind=kind))
        for kind in (
            "clean_golden_cross",
            "stop_loss_trigger",
            "nan_period",
            "flat_market",
            "gap_scenario",
        )
    }


def make_series(closes, symbol="SYNTH", frequency="daily", opens=None,
                start="2024-01-01"):
    closes = np.asarray(closes, dtype=np.float64)
    if opens is None:
        opens = np.empty_like(closes)
        opens[0] = closes[0]
        opens[1:] = closes[:-1]
    else:
        opens = np.asarray(opens, dtype=np.float64)
    high = np.maximum(opens, closes) + 0.25
    low = np.minimum(opens, closes) - 0.25
    volume = np.full(len(closes), 10_000.0)
    step = np.timedelta64(1, "D") if frequency == "daily" else np.timedelta64(1, "m")
    ts = np.datetime64(start, "ns") + np.arange(len(closes)) * step.astype("timedelta64[ns]")
    return from_arrays(symbol, ts, opens, high, low, closes, volume, frequency)

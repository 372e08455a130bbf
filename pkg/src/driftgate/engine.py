"""Deterministic bar-by-bar backtest executor.

Rules are evaluated with strictly causal vector operations, so the audit
record at bar t is a pure function of bars [0, t], the card, and the seed.
Orders fill at bar close. Exit conditions take precedence over entries on
the same bar, and a position never re-enters on its exit bar. The stop-loss
(driven by a stop_loss_pct card parameter) is checked on close before the
signal exit, so a bar satisfying both exits as STOP_LOSS.

Transaction costs are charged per fill: quantity * price * cost_bps / 10000
on entry and again on exit. Cash is debited at the fill bar, which keeps the
accounting identity exact: final equity = initial capital + sum of net pnl.
"""
from __future__ import annotations

import hashlib
import io
import math
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .cards import StrategyCard, validate_schema
from .data import OhlcvSeries, format_timestamp
from .dsl import EvalMode, ValueType, bind, eval_vector, parse_rule
from .errors import (
    CardValidationError,
    LimitExceededError,
    UnsupportedRuleError,
)

SIDE_LONG = "LONG"
SIDE_SHORT = "SHORT"

REASON_SIGNAL_EXIT = "SIGNAL_EXIT"
REASON_STOP_LOSS = "STOP_LOSS"
REASON_END_OF_DATA = "END_OF_DATA"

SIGNAL_FLAT = "FLAT"
SIGNAL_EXIT = "EXIT"

TRADE_LOG_HEADER = (
    "entry_datetime,exit_datetime,side,entry_price,exit_price,quantity,"
    "gross_pnl,pnl,reason"
)

AUDIT_STANDARD_PREFIX = ("datetime", "close")
AUDIT_STANDARD_SUFFIX = (
    "signal",
    "position_state",
    "equity",
    "constraint_check",
    "event_type",
    "message",
)
# event-scoped text columns: required-by-presence, empty on non-event bars
OPTIONAL_TEXT_COLUMNS = ("event_type", "message")


@dataclass(frozen=True)
class RunConfig:
    initial_capital: float = 100_000.0
    seed: int = 42
    execution_timing: str = "bar_close"
    cost_bps: float = 0.0
    max_bars: int | None = None
    wall_clock_budget: float | None = 600.0
    nan_unsafe: bool = False
    fault_injection: bool = False  # inject seed/clock so random()/now() run

    def __post_init__(self):
        if self.initial_capital <= 0:
            raise ValueError("initial_capital must be > 0")
        if self.cost_bps < 0:
            raise ValueError("cost_bps must be >= 0")

    def eval_mode(self) -> EvalMode:
        if self.fault_injection:
            return EvalMode(
                nan_unsafe=self.nan_unsafe,
                rng_seed=self.seed,
                clock=float(self.seed),
            )
        return EvalMode(nan_unsafe=self.nan_unsafe)


@dataclass(frozen=True)
class TradeRecord:
    entry_datetime: np.datetime64
    exit_datetime: np.datetime64
    side: str
    entry_price: float
    exit_price: float
    quantity: float
    gross_pnl: float
    pnl: float
    reason: str
    entry_index: int = -1  # bar indices; not serialized
    exit_index: int = -1

    def cost(self) -> float:
        return self.gross_pnl - self.pnl


def _fmt(x: float) -> str:
    return f"{x:.10g}"


@dataclass(frozen=True)
class TradeLog:
    trades: tuple = ()

    def __len__(self) -> int:
        return len(self.trades)

    def __iter__(self):
        return iter(self.trades)

    def __getitem__(self, i):
        return self.trades[i]

    def total_pnl(self) -> float:
        return float(sum(t.pnl for t in self.trades))

    def total_gross_pnl(self) -> float:
        return float(sum(t.gross_pnl for t in self.trades))

    def to_csv_bytes(self) -> bytes:
        buf = io.StringIO()
        buf.write(TRADE_LOG_HEADER + "\n")
        for t in self.trades:
            buf.write(
                ",".join(
                    (
                        format_timestamp(t.entry_datetime),
                        format_timestamp(t.exit_datetime),
                        t.side,
                        _fmt(t.entry_price),
                        _fmt(t.exit_price),
                        _fmt(t.quantity),
                        _fmt(t.gross_pnl),
                        _fmt(t.pnl),
                        t.reason,
                    )
                )
                + "\n"
            )
        return buf.getvalue().encode("utf-8")

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_csv_bytes())

    @classmethod
    def load(cls, path) -> "TradeLog":
        lines = Path(path).read_text().splitlines()
        if not lines or lines[0] != TRADE_LOG_HEADER:
            raise ValueError(f"unexpected trade log header in {path}")
        trades = []
        for line in lines[1:]:
            if not line:
                continue
            (entry_dt, exit_dt, side, pe, px, qty, gross, pnl, reason) = line.split(",")
            trades.append(
                TradeRecord(
                    entry_datetime=np.datetime64(entry_dt.rstrip("Z"), "ns"),
                    exit_datetime=np.datetime64(exit_dt.rstrip("Z"), "ns"),
                    side=side,
                    entry_price=float(pe),
                    exit_price=float(px),
                    quantity=float(qty),
                    gross_pnl=float(gross),
                    pnl=float(pnl),
                    reason=reason,
                )
            )
        return cls(tuple(trades))


def trade_digest(trade_log: TradeLog) -> str:
    """SHA256 over the serialized (entry, exit, side, pnl) trade tuples."""
    parts = [
        f"{format_timestamp(t.entry_datetime)}|{format_timestamp(t.exit_datetime)}"
        f"|{t.side}|{t.pnl!r}"
        for t in trade_log
    ]
    return hashlib.sha256("\n".join(parts).encode("utf-8")).hexdigest()


class AuditLog:
    """One record per bar: market state, signals, position, equity, checks.

    Engine-built logs hold typed arrays; logs loaded from CSV keep raw cell
    strings so emptiness (null) stays distinguishable from an explicit NaN.
    """

    def __init__(self, timestamps: np.ndarray, columns: dict, column_order: list):
        self.timestamps = timestamps
        self.columns = columns
        self.column_order = list(column_order)

    def __len__(self) -> int:
        return len(self.timestamps)

    def has_column(self, name: str) -> bool:
        return name == "datetime" or name in self.columns

    def column(self, name: str) -> np.ndarray:
        if name == "datetime":
            return self.timestamps
        return self.columns[name]

    def float_column(self, name: str) -> np.ndarray:
        col = self.column(name)
        if col.dtype == np.float64:
            return col
        out = np.full(len(col), np.nan)
        for i, cell in enumerate(col):
            if cell != "":
                out[i] = float(cell)
        return out

    def empty_cell_count(self, name: str) -> int:
        col = self.column(name)
        if col.dtype == object or col.dtype.kind == "U":
            return int(np.sum(col == ""))
        return 0

    def _cell_str(self, name: str, i: int) -> str:
        if name == "datetime":
            return format_timestamp(self.timestamps[i])
        col = self.columns[name]
        if col.dtype == np.float64:
            v = col[i]
            return "NaN" if np.isnan(v) else _fmt(v)
        return str(col[i])

    def row_csv(self, i: int) -> str:
        return ",".join(self._cell_str(n, i) for n in self.column_order)

    def to_csv_bytes(self) -> bytes:
        buf = io.StringIO()
        buf.write(",".join(self.column_order) + "\n")
        for i in range(len(self)):
            buf.write(self.row_csv(i) + "\n")
        return buf.getvalue().encode("utf-8")

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_csv_bytes())

    @classmethod
    def load(cls, path) -> "AuditLog":
        lines = Path(path).read_text().splitlines()
        if not lines:
            raise ValueError(f"empty audit log {path}")
        header = lines[0].split(",")
        rows = [line.split(",") for line in lines[1:] if line]
        ts = np.array(
            [np.datetime64(r[header.index("datetime")].rstrip("Z"), "ns") for r in rows],
            dtype="datetime64[ns]",
        ) if "datetime" in header else np.array([], dtype="datetime64[ns]")
        columns = {}
        for j, name in enumerate(header):
            if name == "datetime":
                continue
            columns[name] = np.array([r[j] if j < len(r) else "" for r in rows], dtype=object)
        return cls(ts, columns, header)


@dataclass
class PortfolioState:
    cash: float
    position_qty: float = 0.0
    position_side: str = SIGNAL_FLAT
    entry_price: float = 0.0
    equity: float = 0.0

    def __post_init__(self):
        if self.equity == 0.0:
            self.equity = self.cash


def position_sizing(state: PortfolioState, price: float, rule: str) -> float:
    """Order quantity under the given sizing rule.

    all_in_all_out: entries deploy floor(cash / price) units, exits flatten
    the whole position.
    """
    if rule != "all_in_all_out":
        raise UnsupportedRuleError(f"unsupported sizing rule: {rule!r}")
    if state.position_qty > 0:
        return state.position_qty
    if price <= 0:
        return 0.0
    return float(math.floor(state.cash / price))


@dataclass
class BacktestResult:
    trade_log: TradeLog
    audit_log: AuditLog
    equity: np.ndarray
    seed: int
    wall_time: float

    def __iter__(self):
        yield self.trade_log
        yield self.audit_log


def _bind_card_rules(card: StrategyCard):
    entry = bind(parse_rule(card.entry_rule), card)
    exit_ = bind(parse_rule(card.exit_rule), card)
    if entry.result_type is not ValueType.BOOLEAN:
        raise UnsupportedRuleError("entry_rule must be a boolean expression")
    if exit_.result_type is not ValueType.BOOLEAN:
        raise UnsupportedRuleError("exit_rule must be a boolean expression")
    indicators = []
    if card.audit_requirements is not None:
        for name, text in card.audit_requirements.indicators:
            rule = bind(parse_rule(text), card)
            if rule.result_type is not ValueType.NUMERIC:
                raise UnsupportedRuleError(f"indicator {name} must be numeric")
            indicators.append((name, rule))
    return entry, exit_, indicators


class _Budget:
    def __init__(self, budget: float | None):
        self.deadline = time.monotonic() + budget if budget is not None else None

    def check(self):
        if self.deadline is not None and time.monotonic() > self.deadline:
            raise LimitExceededError("LIMIT_EXCEEDED: wall clock budget exhausted")


def run_backtest(card: StrategyCard, series: OhlcvSeries, cfg: RunConfig = RunConfig()) -> BacktestResult:
    """Replay the card over the series; emit the two mandatory logs.

    Output is a pure function of (card, series, cfg.seed): running twice
    yields byte-identical serialized logs.
    """
    started = time.monotonic()
    violations = validate_schema(card)
    if violations:
        raise CardValidationError(violations)
    if card.meta.multi_asset:
        raise UnsupportedRuleError(
            "multi-asset cards parse but do not execute in this version"
        )
    n = len(series)
    if n == 0:
        raise ValueError("series is empty")
    if cfg.max_bars is not None and n > cfg.max_bars:
        raise LimitExceededError(
            f"LIMIT_EXCEEDED: series has {n} bars, budget is {cfg.max_bars}"
        )
    budget = _Budget(cfg.wall_clock_budget)

    entry_rule, exit_rule, indicator_rules = _bind_card_rules(card)
    bars = series.bar_arrays()
    mode = cfg.eval_mode()
    entry_sig = eval_vector(entry_rule, bars, mode)
    exit_sig = eval_vector(exit_rule, bars, mode)
    indicator_values = [(name, eval_vector(r, bars, mode)) for name, r in indicator_rules]
    budget.check()

    close = series.close
    ts = series.timestamps
    asset_ok = card.constraints.allows(series.symbol)
    max_leverage = float(card.constraints.max_leverage)
    stop_tv = card.parameter("stop_loss_pct")
    stop_pct = float(stop_tv.value) if stop_tv is not None else None
    sizing_rule = card.position_sizing_rule
    cost_rate = cfg.cost_bps / 10000.0

    signal = np.full(n, SIGNAL_FLAT, dtype=object)
    position_state = np.full(n, SIGNAL_FLAT, dtype=object)
    constraint_check = np.full(n, "PASS", dtype=object)
    event_type = np.full(n, "", dtype=object)
    message = np.full(n, "", dtype=object)
    equity = np.empty(n, dtype=np.float64)

    trades: list = []
    cash = float(cfg.initial_capital)
    last = n - 1
    cursor = 0
    prev_boundary = 0  # first bar of the current flat stretch

    if not asset_ok:
        constraint_check[:] = "FAIL:allowed_assets"
        entry_indices = np.array([], dtype=np.int64)
    else:
        entry_indices = np.flatnonzero(entry_sig)
    exit_indices = np.flatnonzero(exit_sig)

    while True:
        budget.check()
        k = int(np.searchsorted(entry_indices, cursor))
        if k >= len(entry_indices):
            break
        e = int(entry_indices[k])
        if e >= last:
            break  # an entry on the final bar could never hold a full bar
        price_e = float(close[e])
        if not np.isfinite(price_e):
            cursor = e + 1
            continue
        state = PortfolioState(cash=cash)
        qty = position_sizing(state, price_e, sizing_rule)
        if qty <= 0:
            cursor = e + 1
            continue
        if qty * price_e > max_leverage * cash * (1 + 1e-12):
            constraint_check[e] = "FAIL:max_leverage"
            signal[e] = SIDE_LONG
            cursor = e + 1
            continue

        # first exit: stop-loss scanned only up to the next signal exit
        j = int(np.searchsorted(exit_indices, e + 1))
        x_sig = int(exit_indices[j]) if j < len(exit_indices) else None
        x, reason = None, None
        if stop_pct is not None:
            stop_level = price_e * (1.0 - stop_pct)
            scan_end = (x_sig if x_sig is not None else last) + 1
            window = close[e + 1 : scan_end]
            hits = window <= stop_level
            if hits.any():
                s = e + 1 + int(np.argmax(hits))
                x, reason = s, REASON_STOP_LOSS
        if x is None and x_sig is not None:
            x, reason = x_sig, REASON_SIGNAL_EXIT
        if x is None:
            x, reason = last, REASON_END_OF_DATA

        price_x = float(close[x])
        entry_cost = qty * price_e * cost_rate
        exit_cost = qty * price_x * cost_rate
        gross = (price_x - price_e) * qty
        net = gross - entry_cost - exit_cost

        equity[prev_boundary:e] = cash
        cash_in_pos = cash - qty * price_e - entry_cost
        equity[e:x] = cash_in_pos + qty * close[e:x]
        cash = cash_in_pos + qty * price_x - exit_cost
        equity[x] = cash
        prev_boundary = x + 1

        signal[e] = SIDE_LONG
        signal[x] = SIGNAL_EXIT
        position_state[e:x] = SIDE_LONG
        event_type[e] = "TRADE_ENTRY"
        message[e] = f"LONG qty={qty:g} @ {price_e:.10g}"
        event_type[x] = "TRADE_EXIT"
        message[x] = f"{reason} qty={qty:g} @ {price_x:.10g}"

        trades.append(
            TradeRecord(
                entry_datetime=ts[e],
                exit_datetime=ts[x],
                side=SIDE_LONG,
                entry_price=price_e,
                exit_price=price_x,
                quantity=qty,
                gross_pnl=gross,
                pnl=net,
                reason=reason,
                entry_index=e,
                exit_index=x,
            )
        )
        cursor = x + 1

    equity[prev_boundary:] = cash
    budget.check()

    audit = _build_audit_log(
        card, series, indicator_values, signal, position_state, equity,
        constraint_check, event_type, message,
    )
    return BacktestResult(
        trade_log=TradeLog(tuple(trades)),
        audit_log=audit,
        equity=equity,
        seed=cfg.seed,
        wall_time=time.monotonic() - started,
    )


def _build_audit_log(card, series, indicator_values, signal, position_state,
                     equity, constraint_check, event_type, message) -> AuditLog:
    indicator_map = dict(indicator_values)
    declared = (
        card.audit_requirements.audit_log_columns if card.audit_requirements else ()
    )
    standard = set(AUDIT_STANDARD_PREFIX) | set(AUDIT_STANDARD_SUFFIX)
    indicator_order = [c for c in declared if c not in standard]
    for name in indicator_map:
        if name not in indicator_order:
            indicator_order.append(name)

    n = len(series)
    columns: dict = {"close": series.close}
    for name in indicator_order:
        if name in indicator_map:
            columns[name] = indicator_map[name]
        else:
            columns[name] = np.full(n, "", dtype=object)  # demanded but undefined
    columns["signal"] = signal
    columns["position_state"] = position_state
    columns["equity"] = equity
    columns["constraint_check"] = constraint_check
    columns["event_type"] = event_type
    columns["message"] = message
    order = list(AUDIT_STANDARD_PREFIX) + indicator_order + list(AUDIT_STANDARD_SUFFIX)
    return AuditLog(series.timestamps, columns, order)


def apply_costs(trade_log: TradeLog, cost_bps: float) -> TradeLog:
    """Re-cost a fixed set of gross trades at a new bps level."""
    if cost_bps < 0:
        raise ValueError("cost_bps must be >= 0")
    rate = cost_bps / 10000.0
    out = []
    for t in trade_log:
        cost = t.quantity * t.entry_price * rate + t.quantity * t.exit_price * rate
        out.append(replace(t, pnl=t.gross_pnl - cost))
    return TradeLog(tuple(out))


def cost_adjusted_equity(equity: np.ndarray, trade_log: TradeLog, cost_bps: float) -> np.ndarray:
    """Equity curve with per-fill costs deducted from each fill bar onward.

    Matches what the engine would produce at this cost level for the same
    fill sequence; used by the cost sweep so trades stay fixed across levels.
    """
    rate = cost_bps / 10000.0
    adjusted = equity.astype(np.float64).copy()
    for t in trade_log:
        if t.entry_index >= 0:
            adjusted[t.entry_index :] -= t.quantity * t.entry_price * rate
            adjusted[t.exit_index :] -= t.quantity * t.exit_price * rate
    return adjusted


def enforce_limits(n_bars: int, cfg: RunConfig) -> str:
    """Pre-flight budget check: 'ok' or raises LimitExceededError."""
    if cfg.max_bars is not None and n_bars > cfg.max_bars:
        raise LimitExceededError(
            f"LIMIT_EXCEEDED: series has {n_bars} bars, budget is {cfg.max_bars}"
        )
    return "ok"

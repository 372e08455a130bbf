"""Binding and temporally guarded evaluation of rule expressions.

Two entry points share one implementation:

* eval_vector(rule, bars, mode) computes the rule for every bar in one pass
  using only causal operations, so element t is a pure function of bars
  [0, t] and the bound parameters.
* eval_rule(rule, view, t) evaluates at a single bar against a GuardedWindow
  that physically exposes bars [0, t] only; any request past the window
  raises LeakageError.

Comparisons involving NaN evaluate to false, so rules stay silent until
indicators have enough history.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DslTypeError, LeakageError, NondeterminismError, UnboundParameterError
from . import indicators as ind
from .nodes import (
    Arith,
    BoolOp,
    Compare,
    FuncCall,
    Literal,
    Neg,
    Node,
    Not,
    ParamRef,
    PriceRef,
    ValueType,
    FUNCTIONS,
)

MACD_DEFAULTS = (12, 26, 9)

# functions whose listed positional args must bind to integer windows >= 1
_WINDOW_ARGS = {
    "sma": (1,),
    "std": (1,),
    "rsi": (0,),
    "atr": (0,),
    "donchian_high": (0,),
    "donchian_low": (0,),
    "rolling": (1,),
    "macd": (0, 1, 2),
}


def infer_type(node: Node) -> ValueType:
    """Bottom-up type inference; raises DslTypeError on ill-typed trees."""
    if isinstance(node, (Literal, ParamRef, PriceRef)):
        return ValueType.NUMERIC
    if isinstance(node, FuncCall):
        for a in node.args:
            _require(a, ValueType.NUMERIC, f"argument of {node.name}()")
        for _, v in node.kwargs:
            _require(v, ValueType.NUMERIC, f"keyword argument of {node.name}()")
        return FUNCTIONS[node.name][2]
    if isinstance(node, Neg):
        _require(node.operand, ValueType.NUMERIC, "unary minus")
        return ValueType.NUMERIC
    if isinstance(node, Arith):
        _require(node.left, ValueType.NUMERIC, f"{node.op!r}")
        _require(node.right, ValueType.NUMERIC, f"{node.op!r}")
        return ValueType.NUMERIC
    if isinstance(node, Compare):
        _require(node.left, ValueType.NUMERIC, f"{node.op!r}")
        _require(node.right, ValueType.NUMERIC, f"{node.op!r}")
        return ValueType.BOOLEAN
    if isinstance(node, BoolOp):
        _require(node.left, ValueType.BOOLEAN, f"{node.op!r}")
        _require(node.right, ValueType.BOOLEAN, f"{node.op!r}")
        return ValueType.BOOLEAN
    if isinstance(node, Not):
        _require(node.operand, ValueType.BOOLEAN, "'not'")
        return ValueType.BOOLEAN
    raise DslTypeError(f"unknown node {type(node).__name__}")


def _require(node: Node, expected: ValueType, context: str):
    actual = infer_type(node)
    if actual is not expected:
        raise DslTypeError(
            f"{context} requires a {expected.value} operand, got {actual.value} "
            f"at {node.pos}"
        )


@dataclass(frozen=True)
class BoundRule:
    """A rule with every $name substituted; immutable and re-entrant."""

    root: Node
    source: str
    result_type: ValueType


def bind(expr: Node, card) -> BoundRule:
    """Substitute card parameters into expr and validate window arguments."""
    values = card.parameter_values() if hasattr(card, "parameter_values") else dict(card)
    bound = _substitute(expr, values)
    result_type = infer_type(bound)
    _check_windows(bound)
    return BoundRule(root=bound, source="", result_type=result_type)


def _substitute(node: Node, values: dict) -> Node:
    if isinstance(node, ParamRef):
        if node.name not in values:
            raise UnboundParameterError(node.name)
        return Literal(node.line, node.col, float(values[node.name]))
    if isinstance(node, FuncCall):
        args = tuple(_substitute(a, values) for a in node.args)
        kwargs = tuple((k, _substitute(v, values)) for k, v in node.kwargs)
        return FuncCall(node.line, node.col, node.name, args, kwargs)
    if isinstance(node, Neg):
        return Neg(node.line, node.col, _substitute(node.operand, values))
    if isinstance(node, Not):
        return Not(node.line, node.col, _substitute(node.operand, values))
    if isinstance(node, Arith):
        return Arith(node.line, node.col, node.op,
                     _substitute(node.left, values), _substitute(node.right, values))
    if isinstance(node, Compare):
        return Compare(node.line, node.col, node.op,
                       _substitute(node.left, values), _substitute(node.right, values))
    if isinstance(node, BoolOp):
        return BoolOp(node.line, node.col, node.op,
                      _substitute(node.left, values), _substitute(node.right, values))
    return node


def _const_int(node: Node, what: str) -> int:
    value = None
    if isinstance(node, Literal):
        value = node.value
    elif isinstance(node, Neg) and isinstance(node.operand, Literal):
        value = -node.operand.value
    if value is None:
        raise DslTypeError(f"{what} must be a constant integer at {node.pos}")
    if value != int(value):
        raise DslTypeError(f"{what} must be an integer, got {value} at {node.pos}")
    return int(value)


def _check_windows(node: Node):
    from .nodes import walk

    for n in walk(node):
        if not isinstance(n, FuncCall):
            continue
        for idx in _WINDOW_ARGS.get(n.name, ()):
            if idx < len(n.args):
                w = _const_int(n.args[idx], f"{n.name}() window")
                if w < 1:
                    raise DslTypeError(f"{n.name}() window must be >= 1, got {w}")
        if n.name == "shift":
            _const_int(n.args[1], "shift() offset")
        mp = n.kwarg("min_periods") if n.name == "rolling" else None
        if mp is not None:
            v = _const_int(mp, "min_periods")
            if v < 1:
                raise DslTypeError(f"min_periods must be >= 1, got {v}")


@dataclass(frozen=True)
class EvalMode:
    """Evaluation switches.

    nan_unsafe relaxes every rolling window to min_periods=1, replaying the
    partial-window behavior that NaN-handling patches fix. rng/clock inject
    the determinism gate's seeded randomness and frozen clock; without them,
    random()/now() raise NondeterminismError.
    """

    nan_unsafe: bool = False
    rng_seed: int | None = None
    clock: float | None = None


SAFE_MODE = EvalMode()


@dataclass
class BarArrays:
    """Plain float64 columns of one series; the evaluator's input."""

    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    volume: np.ndarray

    def __len__(self) -> int:
        return len(self.close)

    def field(self, name: str) -> np.ndarray:
        return getattr(self, name)


class _VectorEvaluator:
    def __init__(self, bars: BarArrays, mode: EvalMode, first_bar: int = 0):
        self.bars = bars
        self.mode = mode
        self.n = len(bars)
        self.first_bar = first_bar
        self._min_periods = 1 if mode.nan_unsafe else None
        self._rng = (
            np.random.Generator(np.random.PCG64(mode.rng_seed))
            if mode.rng_seed is not None
            else None
        )

    def eval(self, node: Node) -> np.ndarray:
        if isinstance(node, Literal):
            return np.full(self.n, node.value)
        if isinstance(node, PriceRef):
            return self.bars.field(node.field_name)
        if isinstance(node, ParamRef):
            raise UnboundParameterError(node.name)
        if isinstance(node, Neg):
            return -self.eval(node.operand)
        if isinstance(node, Arith):
            left, right = self.eval(node.left), self.eval(node.right)
            with np.errstate(invalid="ignore", divide="ignore"):
                if node.op == "+":
                    return left + right
                if node.op == "-":
                    return left - right
                if node.op == "*":
                    return left * right
                return left / right
        if isinstance(node, Compare):
            left, right = self.eval(node.left), self.eval(node.right)
            with np.errstate(invalid="ignore"):
                if node.op == "<":
                    return left < right
                if node.op == "<=":
                    return left <= right
                if node.op == ">":
                    return left > right
                if node.op == ">=":
                    return left >= right
                return left == right
        if isinstance(node, BoolOp):
            left, right = self.eval(node.left), self.eval(node.right)
            return (left & right) if node.op == "and" else (left | right)
        if isinstance(node, Not):
            return ~self.eval(node.operand)
        if isinstance(node, FuncCall):
            return self._call(node)
        raise DslTypeError(f"unknown node {type(node).__name__}")

    def _call(self, node: FuncCall) -> np.ndarray:
        name = node.name
        mp = self._min_periods
        if name == "sma":
            return ind.sma(self.eval(node.args[0]), _const_int(node.args[1], "window"), mp)
        if name == "std":
            return ind.rolling_std(self.eval(node.args[0]), _const_int(node.args[1], "window"), mp)
        if name == "rolling":
            window = _const_int(node.args[1], "window")
            kw = node.kwarg("min_periods")
            min_periods = _const_int(kw, "min_periods") if kw is not None else window
            if self.mode.nan_unsafe:
                min_periods = 1
            return ind.rolling_mean(self.eval(node.args[0]), window, min_periods)
        if name == "rsi":
            return ind.rsi(self.bars.close, _const_int(node.args[0], "window"), mp)
        if name == "atr":
            return ind.atr(self.bars.high, self.bars.low, self.bars.close,
                           _const_int(node.args[0], "window"), mp)
        if name == "donchian_high":
            return ind.donchian_high(self.bars.high, _const_int(node.args[0], "window"), mp)
        if name == "donchian_low":
            return ind.donchian_low(self.bars.low, _const_int(node.args[0], "window"), mp)
        if name == "macd":
            fast, slow, sig = MACD_DEFAULTS
            if node.args:
                fast = _const_int(node.args[0], "fast span")
                slow = _const_int(node.args[1], "slow span")
                sig = _const_int(node.args[2], "signal span")
            return ind.macd_histogram(self.bars.close, fast, slow, sig)
        if name == "shift":
            k = _const_int(node.args[1], "offset")
            if k < 0:
                raise LeakageError(
                    f"Access beyond bar {self.first_bar}: shift({k}) requests future data"
                )
            return ind.shift(self.eval(node.args[0]), k)
        if name == "cross_above":
            return ind.cross_above(self.eval(node.args[0]), self.eval(node.args[1]))
        if name == "cross_below":
            return ind.cross_below(self.eval(node.args[0]), self.eval(node.args[1]))
        if name == "random":
            if self._rng is None:
                raise NondeterminismError("random() requires an injected seed")
            return self._rng.random(self.n)
        if name == "now":
            if self.mode.clock is None:
                raise NondeterminismError("now() requires an injected clock")
            return np.full(self.n, self.mode.clock)
        raise DslTypeError(f"unknown function {name}")


def eval_vector(rule: BoundRule, bars: BarArrays, mode: EvalMode = SAFE_MODE) -> np.ndarray:
    """Evaluate rule over every bar; element t depends only on bars [0, t]."""
    out = _VectorEvaluator(bars, mode).eval(rule.root)
    if rule.result_type is ValueType.BOOLEAN and out.dtype != np.bool_:
        out = out.astype(bool)
    return out


class GuardedWindow:
    """Read view of one series truncated at a current bar.

    Exposes bars [0, t] only; integer access past t raises LeakageError in
    the same spirit as a runtime data proxy.
    """

    def __init__(self, bars: BarArrays, t: int):
        if t < 0 or t >= len(bars):
            raise IndexError(f"bar {t} outside series of {len(bars)} bars")
        self.t = t
        self._bars = bars

    def __len__(self) -> int:
        return self.t + 1

    def field(self, name: str) -> np.ndarray:
        full = self._bars.field(name)
        view = full[: self.t + 1]
        view.flags.writeable = False
        return view

    def at(self, name: str, index: int) -> float:
        if index > self.t:
            raise LeakageError(f"Access beyond bar {self.t}")
        if index < 0:
            return float("nan")
        return float(self._bars.field(name)[index])

    def as_arrays(self) -> BarArrays:
        return BarArrays(
            open=self.field("open"),
            high=self.field("high"),
            low=self.field("low"),
            close=self.field("close"),
            volume=self.field("volume"),
        )


def eval_rule(rule: BoundRule, view: GuardedWindow, t: int, mode: EvalMode = SAFE_MODE):
    """Value of the rule at bar t, computed from the guarded prefix.

    Indicators with insufficient history yield NaN and any comparison on NaN
    is false, so no entry or exit fires during warm-up.
    """
    if t > view.t:
        raise LeakageError(f"Access beyond bar {view.t}")
    if t < view.t:
        view = GuardedWindow(view._bars, t)
    evaluator = _VectorEvaluator(view.as_arrays(), mode, first_bar=t)
    out = evaluator.eval(rule.root)
    value = out[t]
    if rule.result_type is ValueType.BOOLEAN:
        return bool(value)
    return float(value)

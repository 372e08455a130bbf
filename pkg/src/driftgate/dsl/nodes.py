"""AST node types for the strategy rule language.

Nodes are immutable; positions are 1-based (line, column) into the original
rule text and survive binding so lint findings and runtime errors can point
at source.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field


class ValueType(enum.Enum):
    NUMERIC = "numeric"
    BOOLEAN = "boolean"


PRICE_FIELDS = ("open", "high", "low", "close", "volume")

# name -> (positional arity choices, allowed keyword args, result type)
FUNCTIONS = {
    "sma": ((2,), (), ValueType.NUMERIC),
    "std": ((2,), (), ValueType.NUMERIC),
    "rsi": ((1,), (), ValueType.NUMERIC),
    "macd": ((0, 3), (), ValueType.NUMERIC),
    "atr": ((1,), (), ValueType.NUMERIC),
    "donchian_high": ((1,), (), ValueType.NUMERIC),
    "donchian_low": ((1,), (), ValueType.NUMERIC),
    "rolling": ((2,), ("min_periods",), ValueType.NUMERIC),
    "shift": ((2,), (), ValueType.NUMERIC),
    "cross_above": ((2,), (), ValueType.BOOLEAN),
    "cross_below": ((2,), (), ValueType.BOOLEAN),
    "random": ((0,), (), ValueType.NUMERIC),
    "now": ((0,), (), ValueType.NUMERIC),
}

ARITH_OPS = ("+", "-", "*", "/")
COMPARE_OPS = ("<", "<=", ">", ">=", "=")
BOOL_OPS = ("and", "or")


@dataclass(frozen=True)
class Node:
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)

    @property
    def pos(self) -> str:
        return f"{self.line}:{self.col}"


@dataclass(frozen=True)
class Literal(Node):
    value: float = 0.0


@dataclass(frozen=True)
class ParamRef(Node):
    name: str = ""


@dataclass(frozen=True)
class PriceRef(Node):
    field_name: str = ""


@dataclass(frozen=True)
class FuncCall(Node):
    name: str = ""
    args: tuple = ()
    kwargs: tuple = ()  # ordered (key, node) pairs

    def kwarg(self, key: str):
        for k, v in self.kwargs:
            if k == key:
                return v
        return None


@dataclass(frozen=True)
class Neg(Node):
    operand: Node = None


@dataclass(frozen=True)
class Arith(Node):
    op: str = ""
    left: Node = None
    right: Node = None


@dataclass(frozen=True)
class Compare(Node):
    op: str = ""
    left: Node = None
    right: Node = None


@dataclass(frozen=True)
class BoolOp(Node):
    op: str = ""
    left: Node = None
    right: Node = None


@dataclass(frozen=True)
class Not(Node):
    operand: Node = None


def walk(node: Node):
    """Yield node and all descendants, depth-first, pre-order."""
    yield node
    if isinstance(node, FuncCall):
        for a in node.args:
            yield from walk(a)
        for _, v in node.kwargs:
            yield from walk(v)
    elif isinstance(node, (Neg, Not)):
        yield from walk(node.operand)
    elif isinstance(node, (Arith, Compare, BoolOp)):
        yield from walk(node.left)
        yield from walk(node.right)


def node_count(node: Node) -> int:
    return sum(1 for _ in walk(node))

"""Strategy rule language: parser, static linter, and guarded evaluator."""

from .eval import (
    BarArrays,
    BoundRule,
    EvalMode,
    GuardedWindow,
    SAFE_MODE,
    bind,
    eval_rule,
    eval_vector,
    infer_type,
)
from .lint import LintCode, LintFinding, Severity, StaticLintReport, lint_static, merge_reports
from .nodes import ValueType, node_count, walk
from .parser import parse_rule

__all__ = [
    "BarArrays",
    "BoundRule",
    "EvalMode",
    "GuardedWindow",
    "SAFE_MODE",
    "LintCode",
    "LintFinding",
    "Severity",
    "StaticLintReport",
    "ValueType",
    "bind",
    "eval_rule",
    "eval_vector",
    "infer_type",
    "lint_static",
    "merge_reports",
    "node_count",
    "parse_rule",
    "walk",
]

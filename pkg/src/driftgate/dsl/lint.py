"""Static checks over parsed rule expressions.

Findings never block execution by themselves: gate_fail_candidate findings
mark constructs that will abort at runtime, warnings feed score penalties
and evidence bundles.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

from .nodes import FuncCall, Literal, Neg, Node, ParamRef, walk


class Severity(enum.Enum):
    WARNING = "warning"
    GATE_FAIL_CANDIDATE = "gate_fail_candidate"


class LintCode(enum.Enum):
    LEAK_NEG_SHIFT = "LEAK_NEG_SHIFT"
    LEAK_FORWARD_INDEX = "LEAK_FORWARD_INDEX"  # reserved: the DSL has no indexing
    NONDET_RANDOM = "NONDET_RANDOM"
    NONDET_NOW = "NONDET_NOW"
    ROLLING_NO_MINP = "ROLLING_NO_MINP"
    SUSPICIOUS_KEYWORD = "SUSPICIOUS_KEYWORD"


SUSPICIOUS_SUBSTRINGS = ("future", "forward", "peek", "next")


@dataclass(frozen=True)
class LintFinding:
    code: LintCode
    path: str
    message: str
    severity: Severity


@dataclass(frozen=True)
class StaticLintReport:
    findings: tuple = ()

    @property
    def clean(self) -> bool:
        return not self.findings

    def count(self, code: LintCode) -> int:
        return sum(1 for f in self.findings if f.code == code)

    def codes(self) -> set:
        return {f.code for f in self.findings}


def _shift_offset(node: FuncCall):
    """Static value of shift's second argument, or None if not constant."""
    arg = node.args[1]
    if isinstance(arg, Literal):
        return arg.value
    if isinstance(arg, Neg) and isinstance(arg.operand, Literal):
        return -arg.operand.value
    return None


def lint_static(expr: Node) -> StaticLintReport:
    """Flag leak-prone and nondeterministic constructs in one pass."""
    findings: list[LintFinding] = []
    for node in walk(expr):
        if isinstance(node, FuncCall):
            if node.name == "shift":
                k = _shift_offset(node)
                if k is not None and k < 0:
                    findings.append(
                        LintFinding(
                            LintCode.LEAK_NEG_SHIFT,
                            f"{node.pos}:shift",
                            f"shift({k:g}) requests future bars",
                            Severity.GATE_FAIL_CANDIDATE,
                        )
                    )
            elif node.name == "random":
                findings.append(
                    LintFinding(
                        LintCode.NONDET_RANDOM,
                        f"{node.pos}:random",
                        "random() is nondeterministic without an injected seed",
                        Severity.GATE_FAIL_CANDIDATE,
                    )
                )
            elif node.name == "now":
                findings.append(
                    LintFinding(
                        LintCode.NONDET_NOW,
                        f"{node.pos}:now",
                        "now() reads the wall clock",
                        Severity.GATE_FAIL_CANDIDATE,
                    )
                )
            elif node.name == "rolling" and node.kwarg("min_periods") is None:
                findings.append(
                    LintFinding(
                        LintCode.ROLLING_NO_MINP,
                        f"{node.pos}:rolling",
                        "rolling() without min_periods; executed as min_periods=window",
                        Severity.WARNING,
                    )
                )
        if isinstance(node, ParamRef):
            lowered = node.name.lower()
            for sub in SUSPICIOUS_SUBSTRINGS:
                if sub in lowered:
                    findings.append(
                        LintFinding(
                            LintCode.SUSPICIOUS_KEYWORD,
                            f"{node.pos}:${node.name}",
                            f"identifier {node.name!r} contains {sub!r}",
                            Severity.WARNING,
                        )
                    )
                    break
    return StaticLintReport(tuple(findings))


def merge_reports(*reports: StaticLintReport) -> StaticLintReport:
    findings: list[LintFinding] = []
    for r in reports:
        findings.extend(r.findings)
    return StaticLintReport(tuple(findings))

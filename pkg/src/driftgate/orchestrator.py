"""Build-test-patch loop control: evidence bundles, patch budgets, the
iteration state machine, and code-similarity reporting.

The harness never calls a model; the "model" is any external process that
reads bundle.json and writes the next submission into the run directory.
"""
from __future__ import annotations

import difflib
import hashlib
import json
import os
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

from .diagnostics import DriftReport, SuiteDecision
from .dsl import LintCode, StaticLintReport
from .gates import GateReport
from .scoring import Scorecard

PATCH_BUDGET_LINES = 50
TARGET_THRESHOLD = 0.85
MAX_ITERATIONS = 3

STATUS_CONTINUE = "CONTINUE"
STATUS_TARGETS_MET = "DONE_TARGETS_MET"
STATUS_BUDGET_EXHAUSTED = "DONE_BUDGET_EXHAUSTED"
STATUS_INVALIDATED = "INVALIDATED"

_AUDIT_COLUMN_RE = re.compile(r"missing required column: (\w+)")


@dataclass(frozen=True)
class EvidenceBundle:
    iteration: int
    card: dict
    rules: dict
    scorecard: dict
    gate_failures: tuple = ()
    drift_report: dict | None = None
    peer_reviews: tuple = ()
    suggestions: tuple = ()
    oos_summary: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.iteration < 0:
            raise ValueError("iteration must be >= 0")
        if self.iteration == 0 and self.drift_report is not None:
            raise ValueError("iteration 0 has no baseline, so no drift report")

    def to_json_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "card": self.card,
            "rules": self.rules,
            "scorecard": self.scorecard,
            "gate_failures": list(self.gate_failures),
            "drift_report": self.drift_report,
            "peer_reviews": [dict(p) for p in self.peer_reviews],
            "suggestions": list(self.suggestions),
            "oos_summary": self.oos_summary,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2)


def _suggest_for_failure(message: str) -> str:
    m = _AUDIT_COLUMN_RE.search(message)
    if m:
        return f"Add missing audit column: {m.group(1)}"
    if "completeness" in message:
        return "Populate every required audit column on every bar"
    if message.startswith("determinism"):
        return "Remove or seed nondeterministic primitives so all seeds agree"
    if message.startswith("anti_leak"):
        return "Remove future-bar access; compute each bar from bars [0, t] only"
    if message.startswith("exec"):
        return f"Fix runtime failure ({message.split(':', 1)[-1].strip()})"
    if message.startswith("schema") or message.startswith("parse"):
        return f"Repair the strategy card ({message.split(':', 1)[-1].strip()})"
    if "TRACEABILITY" in message:
        return "Make the audit log support every trade (signals at entry/exit bars)"
    return f"Address gate failure: {message}"


_LINT_SUGGESTIONS = {
    LintCode.LEAK_NEG_SHIFT: "Replace negative shift with a causal formulation",
    LintCode.NONDET_RANDOM: "Remove random() from rules or justify seeded use",
    LintCode.NONDET_NOW: "Remove now() from rules; bar timestamps are the only clock",
    LintCode.ROLLING_NO_MINP: "Pass min_periods to rolling() to pin the lookback",
    LintCode.SUSPICIOUS_KEYWORD: "Rename suspicious identifier or confirm it is not forward-looking",
}


def build_evidence_bundle(
    iteration: int,
    card_dict: dict,
    scorecard: Scorecard,
    gate_report: GateReport,
    drift_report: DriftReport | None = None,
    lint: StaticLintReport | None = None,
    peer_reviews=(),
    oos_summary: dict | None = None,
) -> EvidenceBundle:
    """Assemble the feedback payload for the next iteration.

    Suggestions are template-derived from findings only; a fully passing
    iteration yields an empty list.
    """
    failures = gate_report.failures()
    suggestions = [_suggest_for_failure(m) for m in failures]
    if lint is not None:
        seen = set()
        for finding in lint.findings:
            if finding.code not in seen:
                seen.add(finding.code)
                suggestions.append(_LINT_SUGGESTIONS[finding.code])
    if drift_report is not None:
        if drift_report.decision is SuiteDecision.D1_PENALTY:
            suggestions.append(
                "Revert semantic changes: restore the frozen entry/exit rules, "
                "parameters, and constraints"
            )
        elif drift_report.decision is SuiteDecision.MANUAL_REVIEW:
            suggestions.append(
                "Justified trace divergences require operator review (--accept-justified)"
            )
    rules = {
        "entry_rule": card_dict.get("entry_rule"),
        "exit_rule": card_dict.get("exit_rule"),
        "position_sizing_rule": card_dict.get("position_sizing_rule"),
    }
    return EvidenceBundle(
        iteration=iteration,
        card=card_dict,
        rules=rules,
        scorecard=scorecard.to_json_dict(),
        gate_failures=tuple(failures),
        drift_report=drift_report.to_json_dict() if drift_report else None,
        peer_reviews=tuple(peer_reviews),
        suggestions=tuple(suggestions),
        oos_summary=oos_summary or {},
    )


def _normalize_lines(text: str) -> list:
    lines = text.replace("\r\n", "\n").replace("\r", "\n").split("\n")
    return [line.rstrip() for line in lines]


@dataclass(frozen=True)
class PatchBudgetResult:
    changed_lines: int
    added: int
    removed: int
    passed: bool


def patch_budget_check(
    old_source: str,
    new_source: str,
    budget: int = PATCH_BUDGET_LINES,
    mode: str = "added_plus_removed",
) -> PatchBudgetResult:
    """Count changed lines of a minimal line diff after normalization.

    Default mode counts added + removed (a replaced line costs 2); the
    lenient replaced-counts-1 mode charges a replacement block its larger
    side.
    """
    old_lines = _normalize_lines(old_source)
    new_lines = _normalize_lines(new_source)
    matcher = difflib.SequenceMatcher(a=old_lines, b=new_lines, autojunk=False)
    added = removed = lenient = 0
    for tag, i1, i2, j1, j2 in matcher.get_opcodes():
        if tag == "delete":
            removed += i2 - i1
            lenient += i2 - i1
        elif tag == "insert":
            added += j2 - j1
            lenient += j2 - j1
        elif tag == "replace":
            removed += i2 - i1
            added += j2 - j1
            lenient += max(i2 - i1, j2 - j1)
    changed = lenient if mode == "replaced-counts-1" else added + removed
    return PatchBudgetResult(
        changed_lines=changed, added=added, removed=removed, passed=changed <= budget
    )


def code_similarity(a_source: str, b_source: str) -> float:
    """1 - normalized line-level edit distance; 1.0 identical, 0.0 disjoint."""
    a = _normalize_lines(a_source)
    b = _normalize_lines(b_source)
    if not a and not b:
        return 1.0
    prev = list(range(len(b) + 1))
    for i in range(1, len(a) + 1):
        cur = [i] + [0] * len(b)
        for j in range(1, len(b) + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
        prev = cur
    return 1.0 - prev[len(b)] / max(len(a), len(b))


@dataclass(frozen=True)
class IterationState:
    """One build-test-patch state machine per (model, strategy) pair."""

    k: int = 0
    baseline_card: dict | None = None
    history: tuple = ()  # bundle digests, oldest first
    status: str = STATUS_CONTINUE

    def __post_init__(self):
        if not 0 <= self.k <= MAX_ITERATIONS:
            raise ValueError(f"iteration index {self.k} outside 0..{MAX_ITERATIONS}")

    def to_json_dict(self) -> dict:
        return {
            "k": self.k,
            "baseline_card": self.baseline_card,
            "history": list(self.history),
            "status": self.status,
        }

    @classmethod
    def from_json_dict(cls, raw: dict) -> "IterationState":
        return cls(
            k=int(raw.get("k", 0)),
            baseline_card=raw.get("baseline_card"),
            history=tuple(raw.get("history", ())),
            status=raw.get("status", STATUS_CONTINUE),
        )


def iteration_step(
    state: IterationState,
    scorecard: Scorecard,
    drifted: bool,
    submitted_card: dict | None = None,
    bundle_digest: str | None = None,
    threshold: float = TARGET_THRESHOLD,
) -> IterationState:
    """Advance the state machine with one scored submission.

    A drifted submission is INVALIDATED: it consumes nothing, the baseline
    and history stay put, and iteration k can be resubmitted. Otherwise the
    submission becomes the new baseline; the loop ends when D1-D3 meet the
    threshold or the iteration budget is spent.
    """
    if drifted:
        return replace(state, status=STATUS_INVALIDATED)
    history = state.history + ((bundle_digest,) if bundle_digest else ())
    baseline = submitted_card if submitted_card is not None else state.baseline_card
    if scorecard.meets_targets(threshold):
        return replace(
            state, status=STATUS_TARGETS_MET, baseline_card=baseline, history=history
        )
    if state.k >= MAX_ITERATIONS:
        return replace(
            state, status=STATUS_BUDGET_EXHAUSTED, baseline_card=baseline, history=history
        )
    return replace(
        state,
        k=state.k + 1,
        status=STATUS_CONTINUE,
        baseline_card=baseline,
        history=history,
    )


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def write_iteration_artifacts(
    iter_dir,
    card_dict: dict,
    bundle: EvidenceBundle,
    gate_report: GateReport,
    scorecard: Scorecard,
    trade_log=None,
    audit_log=None,
) -> str:
    """Persist one iteration's artifacts; returns the bundle digest.

    Layout: <iter_dir>/{card.json, rules/, trade_log.csv, audit_log.csv,
    gates.json, scorecard.json, bundle.json}.
    """
    iter_dir = Path(iter_dir)
    iter_dir.mkdir(parents=True, exist_ok=True)
    (iter_dir / "rules").mkdir(exist_ok=True)
    _atomic_write(iter_dir / "card.json", json.dumps(card_dict, indent=2).encode())
    for name in ("entry_rule", "exit_rule", "position_sizing_rule"):
        text = card_dict.get(name) or ""
        _atomic_write(iter_dir / "rules" / f"{name}.txt", (text + "\n").encode())
    _atomic_write(iter_dir / "gates.json", gate_report.to_json().encode())
    _atomic_write(iter_dir / "scorecard.json", scorecard.to_json().encode())
    bundle_bytes = bundle.to_json().encode()
    _atomic_write(iter_dir / "bundle.json", bundle_bytes)
    if trade_log is not None:
        _atomic_write(iter_dir / "trade_log.csv", trade_log.to_csv_bytes())
    if audit_log is not None:
        _atomic_write(iter_dir / "audit_log.csv", audit_log.to_csv_bytes())
    digest = hashlib.sha256(bundle_bytes).hexdigest()
    bundles_dir = iter_dir.parent / "bundles"
    bundles_dir.mkdir(exist_ok=True)
    _atomic_write(bundles_dir / f"{digest}.json", bundle_bytes)
    return digest


PROMPT_SECTIONS = """# Iteration {k}: evidence-driven patch

## Constraints
- Strategy semantics are frozen: entry/exit rules, parameter values, and
  constraints must not change.
- Patch budget: at most {budget} changed lines.
- Maintain or improve every dimension score.

## Scorecard
{scorecard}

## Gate failures
{failures}

## Suggestions
{suggestions}

## Task
Fix the findings above without changing frozen semantics, then resubmit the
strategy card.
"""


def render_iteration_prompt(bundle: EvidenceBundle, budget: int = PATCH_BUDGET_LINES) -> str:
    failures = "\n".join(f"- {m}" for m in bundle.gate_failures) or "- none"
    suggestions = "\n".join(f"- {s}" for s in bundle.suggestions) or "- none"
    return PROMPT_SECTIONS.format(
        k=bundle.iteration,
        budget=budget,
        scorecard=json.dumps(bundle.scorecard, sort_keys=True),
        failures=failures,
        suggestions=suggestions,
    )

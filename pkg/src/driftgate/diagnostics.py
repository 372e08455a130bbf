"""Trace-based drift detection: action-trace extraction, normalized edit
distance, threshold classification, and the micro-scenario regression suite.

Layer 1 (card equivalence) always dominates: these diagnostics refine the
picture for submissions whose cards already hash equal.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, replace

from .cards import StrategyCard, check_equivalence, EquivalenceReport, DEFAULT_TOLERANCES
from .data.scenarios import gen_micro_scenario, standard_scenarios
from .engine import AuditLog, RunConfig, run_backtest

ACTION_ENTER_LONG = "ENTER_LONG"
ACTION_ENTER_SHORT = "ENTER_SHORT"
ACTION_EXIT = "EXIT"
ACTION_HOLD = "HOLD"

THRESHOLD_WARNING = 0.05
THRESHOLD_SUSPICIOUS = 0.15


class DriftClass(enum.Enum):
    ALLOWED = "ALLOWED"
    WARNING = "WARNING"
    SUSPICIOUS = "SUSPICIOUS"


class SuiteDecision(enum.Enum):
    NO_DRIFT = "NO_DRIFT"
    MANUAL_REVIEW = "MANUAL_REVIEW"
    D1_PENALTY = "D1_PENALTY"


@dataclass(frozen=True)
class ActionTrace:
    elements: tuple  # ordered (t, signal, position, action) tuples
    scenario_id: str = ""

    def __len__(self) -> int:
        return len(self.elements)


def extract_trace(audit: AuditLog, scenario_id: str = "") -> ActionTrace:
    """One (t, signal, position, action) tuple per bar; the action is derived
    from consecutive position-state transitions."""
    signal = audit.column("signal")
    position = audit.column("position_state")
    elements = []
    prev = "FLAT"
    for t in range(len(audit)):
        pos = str(position[t])
        if pos == prev:
            action = ACTION_HOLD
        elif pos == "FLAT":
            action = ACTION_EXIT
        elif pos == "LONG":
            action = ACTION_ENTER_LONG
        else:
            action = ACTION_ENTER_SHORT
        elements.append((t, str(signal[t]), pos, action))
        prev = pos
    return ActionTrace(tuple(elements), scenario_id)


def trace_divergence(t0: ActionTrace, tk: ActionTrace) -> float:
    """Levenshtein distance over full-tuple elements, normalized by the
    longer trace; 0.0 iff identical, 1.0 for fully disjoint equal lengths."""
    a, b = t0.elements, tk.elements
    if not a and not b:
        return 0.0
    if not a or not b:
        return 1.0
    prev = list(range(len(b) + 1))
    for i in range(1, len(a) + 1):
        cur = [i] + [0] * len(b)
        ai = a[i - 1]
        for j in range(1, len(b) + 1):
            cost = 0 if ai == b[j - 1] else 1
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
        prev = cur
    return prev[len(b)] / max(len(a), len(b))


@dataclass(frozen=True)
class DriftVerdict:
    delta: float
    drift_class: DriftClass
    justification: str | None = None


def classify_divergence(delta: float) -> DriftClass:
    """Thresholds are closed on the left: 0.05 is WARNING, 0.15 SUSPICIOUS."""
    if delta < THRESHOLD_WARNING:
        return DriftClass.ALLOWED
    if delta < THRESHOLD_SUSPICIOUS:
        return DriftClass.WARNING
    return DriftClass.SUSPICIOUS


@dataclass(frozen=True)
class ScenarioResult:
    scenario: str
    delta: float
    drift_class: DriftClass
    justification: str | None
    status: str  # PASS | ALLOWED | DIVERGENT

    def to_json_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "delta": self.delta,
            "class": self.drift_class.value,
            "justification": self.justification,
            "status": self.status,
        }


@dataclass(frozen=True)
class SuiteReport:
    results: tuple
    decision: SuiteDecision
    headline_delta: float  # max over scenarios

    def to_json_dict(self) -> dict:
        return {
            "scenarios": [r.to_json_dict() for r in self.results],
            "decision": self.decision.value,
            "headline_delta": self.headline_delta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2)


def run_regression_suite(
    card0: StrategyCard,
    cardk: StrategyCard,
    scenarios: list | None = None,
    justifications: dict | None = None,
    baseline_nan_unsafe: bool = False,
    candidate_nan_unsafe: bool = False,
    cfg: RunConfig = RunConfig(),
) -> SuiteReport:
    """Replay both cards over the frozen micro-scenarios and compare traces.

    Per scenario: identical traces PASS; a divergence with a justification is
    ALLOWED; otherwise DIVERGENT. Decision: no divergence is NO_DRIFT, one or
    two justified divergences need MANUAL_REVIEW, three or more or any
    unjustified divergence is a D1_PENALTY.
    """
    scenarios = scenarios if scenarios is not None else standard_scenarios()
    justifications = justifications or {}
    results = []
    divergent = 0
    unjustified = 0
    for scenario in scenarios:
        series = gen_micro_scenario(scenario)
        base_cfg = replace(cfg, nan_unsafe=baseline_nan_unsafe, fault_injection=True)
        cand_cfg = replace(cfg, nan_unsafe=candidate_nan_unsafe, fault_injection=True)
        trace0 = extract_trace(run_backtest(card0, series, base_cfg).audit_log, scenario.kind)
        tracek = extract_trace(run_backtest(cardk, series, cand_cfg).audit_log, scenario.kind)
        delta = trace_divergence(trace0, tracek)
        justification = justifications.get(scenario.kind)
        if delta == 0.0:
            status = "PASS"
        elif justification:
            status = "ALLOWED"
            divergent += 1
        else:
            status = "DIVERGENT"
            divergent += 1
            unjustified += 1
        results.append(
            ScenarioResult(
                scenario=scenario.kind,
                delta=delta,
                drift_class=classify_divergence(delta),
                justification=justification,
                status=status,
            )
        )
    if divergent == 0:
        decision = SuiteDecision.NO_DRIFT
    elif unjustified > 0 or divergent >= 3:
        decision = SuiteDecision.D1_PENALTY
    else:
        decision = SuiteDecision.MANUAL_REVIEW
    headline = max((r.delta for r in results), default=0.0)
    return SuiteReport(tuple(results), decision, headline)


@dataclass(frozen=True)
class DriftReport:
    """Two-layer verdict for one iteration's card against its baseline."""

    layer1: EquivalenceReport
    layer2: SuiteReport | None
    decision: SuiteDecision

    def to_json_dict(self) -> dict:
        return {
            "layer1": {
                "equivalent": self.layer1.equivalent,
                "core_logic_hash_match": self.layer1.core_logic_hash_match,
                "changed_parameters": [list(c) for c in self.layer1.changed_parameters],
                "changed_constraints": list(self.layer1.changed_constraints),
                "drift_flag": self.layer1.drift_flag,
            },
            "layer2": self.layer2.to_json_dict() if self.layer2 else None,
            "decision": self.decision.value,
        }


def drift_check(
    card0: StrategyCard,
    cardk: StrategyCard,
    scenarios: list | None = None,
    justifications: dict | None = None,
    baseline_nan_unsafe: bool = False,
    tolerances=DEFAULT_TOLERANCES,
) -> DriftReport:
    """Layer 1 equivalence, then the Layer 2 regression suite.

    A Layer 1 failure is the ground truth and forces D1_PENALTY; the suite
    still runs (when both cards are executable) purely as diagnostics.
    """
    layer1 = check_equivalence(card0, cardk, tolerances)
    layer2 = None
    if not (card0.meta.multi_asset or cardk.meta.multi_asset):
        layer2 = run_regression_suite(
            card0,
            cardk,
            scenarios=scenarios,
            justifications=justifications,
            baseline_nan_unsafe=baseline_nan_unsafe,
        )
    if not layer1.equivalent:
        decision = SuiteDecision.D1_PENALTY
    elif layer2 is not None:
        decision = layer2.decision
    else:
        decision = SuiteDecision.NO_DRIFT
    return DriftReport(layer1=layer1, layer2=layer2, decision=decision)

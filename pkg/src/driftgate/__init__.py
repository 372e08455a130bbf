"""driftgate: a deterministic, governed backtesting harness.

Strategies are frozen strategy cards plus a small rule DSL; the engine
replays them bar by bar under anti-leakage and determinism guarantees,
detects semantic drift across iterative patches, and emits scorecards and
evidence bundles for a build-test-patch loop.
"""

from .cards import (
    EquivalenceReport,
    EquivalenceTolerances,
    StrategyCard,
    apply_drift_penalty,
    canonicalize,
    check_equivalence,
    load_card,
    semantic_hash,
    validate_schema,
)
from .data import OhlcvSeries, apply_split, checksum, clean, load_csv
from .data.scenarios import SyntheticScenario, gen_micro_scenario, standard_scenarios
from .diagnostics import (
    ActionTrace,
    classify_divergence,
    drift_check,
    extract_trace,
    run_regression_suite,
    trace_divergence,
)
from .engine import RunConfig, TradeLog, apply_costs, run_backtest
from .gates import GateReport, run_gates, traceability_check
from .orchestrator import (
    EvidenceBundle,
    IterationState,
    build_evidence_bundle,
    code_similarity,
    iteration_step,
    patch_budget_check,
)
from .scoring import Scorecard, complexity_score, oos_metrics, score_d3, score_d4

__version__ = "0.1.0"

__all__ = [
    "ActionTrace",
    "EquivalenceReport",
    "EquivalenceTolerances",
    "EvidenceBundle",
    "GateReport",
    "IterationState",
    "OhlcvSeries",
    "RunConfig",
    "Scorecard",
    "StrategyCard",
    "SyntheticScenario",
    "TradeLog",
    "apply_costs",
    "apply_drift_penalty",
    "apply_split",
    "build_evidence_bundle",
    "canonicalize",
    "check_equivalence",
    "checksum",
    "classify_divergence",
    "clean",
    "code_similarity",
    "complexity_score",
    "drift_check",
    "extract_trace",
    "gen_micro_scenario",
    "iteration_step",
    "load_card",
    "load_csv",
    "oos_metrics",
    "patch_budget_check",
    "run_backtest",
    "run_gates",
    "run_regression_suite",
    "score_d3",
    "score_d4",
    "semantic_hash",
    "standard_scenarios",
    "trace_divergence",
    "traceability_check",
    "validate_schema",
]

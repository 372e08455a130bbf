"""The six mandatory validity gates plus audit completeness and
traceability. A submission failing any gate is invalid and excluded from
scoring.

Evaluation order is parse -> schema -> exec -> determinism -> anti_leak ->
audit; a FAIL short-circuits later gates, which are reported as SKIPPED.
Gate runs execute with the harness's seed/clock injected so nondeterministic
primitives run and get caught by the determinism gate instead of dying as
generic runtime errors; a runtime leakage abort is charged to the Anti-Leak
gate, not Exec.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace

import numpy as np

from .cards import StrategyCard, parse_card_json, validate_schema
from .data import OhlcvSeries, format_timestamp
from .dsl import StaticLintReport, lint_static, merge_reports, parse_rule
from .engine import (
    AuditLog,
    BacktestResult,
    OPTIONAL_TEXT_COLUMNS,
    RunConfig,
    TradeLog,
    run_backtest,
    trade_digest,
)
from .errors import DriftgateError, DslSyntaxError, LeakageError, LimitExceededError

PASS = "PASS"
FAIL = "FAIL"
SKIPPED = "SKIPPED"

GATE_NAMES = ("parse", "schema", "exec", "determinism", "anti_leak", "audit")
DETERMINISM_SEEDS = (42, 123, 7)
COMPLETENESS_THRESHOLD = 0.95
CONTINUOUS_REL_TOL = 1e-6
MISSING_COLUMN_FMT = "AUDIT_LOG missing required column: {name}"


@dataclass(frozen=True)
class GateResult:
    status: str = SKIPPED
    messages: tuple = ()

    @property
    def passed(self) -> bool:
        return self.status == PASS

    def to_json(self) -> dict:
        return {"status": self.status, "messages": list(self.messages)}


@dataclass(frozen=True)
class GateReport:
    parse: GateResult = GateResult()
    schema: GateResult = GateResult()
    exec: GateResult = GateResult()
    determinism: GateResult = GateResult()
    anti_leak: GateResult = GateResult()
    audit: GateResult = GateResult()

    @property
    def valid(self) -> bool:
        return all(getattr(self, g).status == PASS for g in GATE_NAMES)

    def gate(self, name: str) -> GateResult:
        return getattr(self, name)

    def failures(self) -> list:
        out = []
        for name in GATE_NAMES:
            result = getattr(self, name)
            if result.status == FAIL:
                out.extend(f"{name}: {m}" for m in result.messages)
        return out

    def to_json_dict(self) -> dict:
        out = {name: getattr(self, name).to_json() for name in GATE_NAMES}
        out["valid"] = self.valid
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2)


def gate_parse(card_bytes: bytes):
    """Valid JSON object or FAIL with decode position."""
    try:
        raw = parse_card_json(card_bytes)
        return GateResult(PASS), raw
    except json.JSONDecodeError as exc:
        return GateResult(FAIL, (f"invalid JSON: {exc.msg} at line {exc.lineno} column {exc.colno}",)), None
    except (ValueError, UnicodeDecodeError) as exc:
        return GateResult(FAIL, (str(exc),)), None


def gate_schema(card: StrategyCard) -> GateResult:
    violations = validate_schema(card)
    if violations:
        return GateResult(FAIL, tuple(violations))
    return GateResult(PASS)


def gate_audit(audit: AuditLog, required_columns) -> tuple:
    """Column presence plus cell completeness against the card's declared
    audit columns.

    Completeness counts non-empty cells in required per-bar columns;
    event-scoped text columns (event_type, message) are satisfied by
    presence, since they are empty on non-event bars by design. An explicit
    NaN is a recorded value, not a null.
    """
    messages = []
    for name in required_columns:
        if not audit.has_column(name):
            messages.append(MISSING_COLUMN_FMT.format(name=name))
    counted = [
        c for c in required_columns
        if c not in OPTIONAL_TEXT_COLUMNS and audit.has_column(c)
    ]
    total = len(audit) * len(counted)
    if total == 0:
        completeness = 0.0 if messages else 1.0
    else:
        empty = sum(audit.empty_cell_count(c) for c in counted)
        completeness = (total - empty) / total
    if completeness < COMPLETENESS_THRESHOLD:
        messages.append(
            f"audit completeness {completeness:.4g} below threshold "
            f"{COMPLETENESS_THRESHOLD}"
        )
    status = FAIL if messages else PASS
    return GateResult(status, tuple(messages)), completeness


def audit_completeness_penalty(completeness: float) -> float:
    """D3 deduction for an incomplete audit log; 0 at or above threshold."""
    if completeness >= COMPLETENESS_THRESHOLD:
        return 0.0
    return -2.0 * (COMPLETENESS_THRESHOLD - completeness)


def traceability_check(trades: TradeLog, audit: AuditLog, n: int = 10, seed: int = 42,
                       cost_bps: float = 0.0):
    """Sample trades and verify the audit log supports each one: entry-bar
    signal matches the side, exit-bar signal is EXIT, and pnl reconciles
    with (exit - entry) * qty - cost at the declared cost rate."""
    messages = []
    count = len(trades)
    if count == 0:
        return GateResult(PASS), []
    indices = list(range(count))
    if count > n:
        indices = sorted(random.Random(seed).sample(indices, n))
    ts = audit.timestamps.astype("int64")
    signal = audit.column("signal")
    rate = cost_bps / 10000.0
    for i in indices:
        t = trades[i]
        problems = []
        entry_pos = int(np.searchsorted(ts, t.entry_datetime.astype("int64")))
        exit_pos = int(np.searchsorted(ts, t.exit_datetime.astype("int64")))
        if entry_pos >= len(ts) or ts[entry_pos] != t.entry_datetime.astype("int64"):
            problems.append(f"entry bar {format_timestamp(t.entry_datetime)} not in audit log")
        elif str(signal[entry_pos]) != t.side:
            problems.append(
                f"audit_log: {format_timestamp(t.entry_datetime)} "
                f"signal={signal[entry_pos]} (MISMATCH!)"
            )
        if exit_pos >= len(ts) or ts[exit_pos] != t.exit_datetime.astype("int64"):
            problems.append(f"exit bar {format_timestamp(t.exit_datetime)} not in audit log")
        elif str(signal[exit_pos]) != "EXIT":
            problems.append(
                f"audit_log: {format_timestamp(t.exit_datetime)} "
                f"signal={signal[exit_pos]} expected EXIT (MISMATCH!)"
            )
        direction = 1.0 if t.side == "LONG" else -1.0
        cost = t.quantity * (t.entry_price + t.exit_price) * rate
        expected = (t.exit_price - t.entry_price) * t.quantity * direction - cost
        if abs(expected - t.pnl) > CONTINUOUS_REL_TOL * max(abs(expected), abs(t.pnl), 1.0):
            problems.append(f"pnl {t.pnl!r} does not reconcile (expected {expected!r})")
        if problems:
            messages.append(
                f"TRACEABILITY ERROR [Trade {i}]: "
                f"trade_log: entry={format_timestamp(t.entry_datetime)}, "
                f"side={t.side}, pnl={t.pnl:+g}; " + "; ".join(problems)
            )
    status = FAIL if messages else PASS
    return GateResult(status, tuple(messages)), indices


def compare_trade_logs(a: TradeLog, b: TradeLog, rel_tol: float = CONTINUOUS_REL_TOL) -> list:
    """Field-wise comparison: discrete fields exact, continuous fields under
    relative tolerance. Returns divergence messages (empty = agree)."""
    if len(a) != len(b):
        return [f"trade count differs ({len(a)} vs {len(b)})"]
    messages = []
    for i, (ta, tb) in enumerate(zip(a, b)):
        if ta.entry_datetime != tb.entry_datetime:
            messages.append(
                f"Trade {i} entry time differs "
                f"({format_timestamp(ta.entry_datetime)} vs {format_timestamp(tb.entry_datetime)})"
            )
        elif ta.exit_datetime != tb.exit_datetime:
            messages.append(
                f"Trade {i} exit time differs "
                f"({format_timestamp(ta.exit_datetime)} vs {format_timestamp(tb.exit_datetime)})"
            )
        elif ta.side != tb.side:
            messages.append(f"Trade {i} side differs ({ta.side} vs {tb.side})")
        elif ta.quantity != tb.quantity:
            messages.append(f"Trade {i} quantity differs ({ta.quantity} vs {tb.quantity})")
        else:
            for column in ("pnl", "entry_price", "exit_price"):
                x, y = getattr(ta, column), getattr(tb, column)
                if abs(x - y) > rel_tol * max(abs(x), abs(y), 1.0):
                    messages.append(f"Trade {i} {column} differs ({x!r} vs {y!r})")
                    break
        if messages:
            break
    return messages


def gate_determinism(
    card: StrategyCard,
    series: OhlcvSeries,
    cfg: RunConfig,
    seeds=DETERMINISM_SEEDS,
    base_result: BacktestResult | None = None,
):
    """Run once per seed and demand matching trade-level outcomes.

    Digests must agree; when they differ, a field-wise comparison under the
    floating-point tolerance decides (so a sub-tolerance pnl wobble still
    passes while a changed trade or timestamp fails).
    """
    runs: dict = {}
    for s in seeds:
        if base_result is not None and s == base_result.seed:
            runs[s] = base_result
            continue
        runs[s] = run_backtest(card, series, replace(cfg, seed=s, fault_injection=True))
    digests = {s: trade_digest(runs[s].trade_log) for s in seeds}

    messages = []
    first = seeds[0]
    for s in seeds[1:]:
        if digests[s] == digests[first]:
            continue
        divergences = compare_trade_logs(runs[first].trade_log, runs[s].trade_log)
        if divergences:
            messages.append(
                "DETERMINISM FAILURE:\n"
                + "\n".join(
                    f"  Seed {k}: Hash={digests[k][:8]}..."
                    + (" (MISMATCH)" if digests[k] != digests[first] else "")
                    for k in seeds
                )
                + f"\n  Divergence: {divergences[0]}"
            )
            break
    status = FAIL if messages else PASS
    return GateResult(status, tuple(messages)), digests


def gate_exec(outcome: Exception | BacktestResult) -> GateResult:
    if isinstance(outcome, BacktestResult):
        return GateResult(PASS)
    if isinstance(outcome, LeakageError):
        # charged to the Anti-Leak gate; the run itself raised no other error
        return GateResult(PASS, (f"run aborted by leakage guard: {outcome}",))
    if isinstance(outcome, LimitExceededError):
        return GateResult(FAIL, (str(outcome),))
    return GateResult(FAIL, (f"{type(outcome).__name__}: {outcome}",))


def gate_antileak(lint: StaticLintReport, runtime_leak: LeakageError | None) -> GateResult:
    """Runtime leakage fails the gate; static findings alone only warn."""
    warnings = tuple(
        f"{f.code.value} at {f.path}: {f.message}" for f in lint.findings
    )
    if runtime_leak is not None:
        return GateResult(FAIL, (str(runtime_leak),) + warnings)
    return GateResult(PASS, warnings)


@dataclass
class GatesOutcome:
    report: GateReport
    card: StrategyCard | None = None
    base_result: BacktestResult | None = None
    lint: StaticLintReport = field(default_factory=StaticLintReport)
    digests: dict = field(default_factory=dict)
    completeness: float | None = None
    traceability_sample: list = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return self.report.valid


def lint_card_rules(card: StrategyCard) -> StaticLintReport:
    reports = []
    for text in (card.entry_rule, card.exit_rule):
        if text:
            try:
                reports.append(lint_static(parse_rule(text)))
            except DslSyntaxError:
                pass  # schema gate already carries the parse failure
    return merge_reports(*reports) if reports else StaticLintReport()


def run_gates(
    card_bytes: bytes,
    series: OhlcvSeries,
    cfg: RunConfig = RunConfig(),
    seeds=DETERMINISM_SEEDS,
    traceability_n: int = 10,
) -> GatesOutcome:
    """Full gate pipeline over raw card bytes and a data series."""
    skipped = GateResult(SKIPPED)

    parse_result, raw = gate_parse(card_bytes)
    if not parse_result.passed:
        return GatesOutcome(report=GateReport(parse=parse_result))

    card = StrategyCard.from_dict(raw)
    schema_result = gate_schema(card)
    if not schema_result.passed:
        return GatesOutcome(
            report=GateReport(parse=parse_result, schema=schema_result), card=card
        )

    lint = lint_card_rules(card)
    base_cfg = replace(cfg, seed=seeds[0], fault_injection=True)
    runtime_leak: LeakageError | None = None
    try:
        base = run_backtest(card, series, base_cfg)
        exec_outcome: Exception | BacktestResult = base
    except LeakageError as exc:
        runtime_leak = exc
        base = None
        exec_outcome = exc
    except (DriftgateError, ValueError, ZeroDivisionError, KeyError) as exc:
        base = None
        exec_outcome = exc

    exec_result = gate_exec(exec_outcome)
    if not exec_result.passed:
        return GatesOutcome(
            report=GateReport(parse=parse_result, schema=schema_result, exec=exec_result),
            card=card,
            lint=lint,
        )

    if runtime_leak is not None:
        # run aborted: nothing to hash or audit, leakage decides validity
        report = GateReport(
            parse=parse_result,
            schema=schema_result,
            exec=exec_result,
            determinism=GateResult(SKIPPED, ("run aborted by leakage guard",)),
            anti_leak=gate_antileak(lint, runtime_leak),
            audit=skipped,
        )
        return GatesOutcome(report=report, card=card, lint=lint)

    determinism_result, digests = gate_determinism(
        card, series, cfg, seeds=seeds, base_result=base
    )
    if not determinism_result.passed:
        report = GateReport(
            parse=parse_result,
            schema=schema_result,
            exec=exec_result,
            determinism=determinism_result,
        )
        return GatesOutcome(
            report=report, card=card, base_result=base, lint=lint, digests=digests
        )

    anti_leak_result = gate_antileak(lint, None)

    required = card.audit_requirements.audit_log_columns
    audit_result, completeness = gate_audit(base.audit_log, required)
    trace_result, sample = traceability_check(
        base.trade_log, base.audit_log, n=traceability_n, seed=cfg.seed,
        cost_bps=cfg.cost_bps,
    )
    if not trace_result.passed:
        audit_result = GateResult(FAIL, audit_result.messages + trace_result.messages)

    report = GateReport(
        parse=parse_result,
        schema=schema_result,
        exec=exec_result,
        determinism=determinism_result,
        anti_leak=anti_leak_result,
        audit=audit_result,
    )
    return GatesOutcome(
        report=report,
        card=card,
        base_result=base,
        lint=lint,
        digests=digests,
        completeness=completeness,
        traceability_sample=sample,
    )

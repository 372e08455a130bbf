"""Command-line surface tying the harness together.

Exit codes: 0 ok/valid, 1 gate fail/invalid, 2 usage error, 3 internal
error, 4 manual review required, 5 drift penalty. JSON output mode emits
sorted keys so CI can diff it; the table mode is for humans only.
"""
from __future__ import annotations

import json
import sys
from dataclasses import dataclass
from pathlib import Path

import click

from . import reporting
from .cards import (
    StrategyCard,
    apply_drift_penalty,
    load_card,
)
from .data import FROZEN_SPLITS, OhlcvSeries, apply_split, load_csv
from .diagnostics import SuiteDecision, drift_check
from .engine import (
    AuditLog,
    RunConfig,
    TradeLog,
    apply_costs,
    cost_adjusted_equity,
    run_backtest,
)
from .errors import CardValidationError, DriftgateError
from .gates import (
    audit_completeness_penalty,
    gate_audit,
    gate_parse,
    gate_schema,
    run_gates,
)
from .orchestrator import (
    IterationState,
    STATUS_INVALIDATED,
    build_evidence_bundle,
    iteration_step,
    render_iteration_prompt,
    write_iteration_artifacts,
)
from .scoring import (
    D3Inputs,
    ReviewMatrix,
    Scorecard,
    aggregate_reviews,
    combine_d4,
    d4_inputs_from_card,
    is_constant_rule,
    make_scorecard,
    oos_metrics,
    score_d2_from_audit,
    score_d3,
    score_d4,
    score_d4_oos,
    unaudited_indicator_usage,
)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_USAGE = 2
EXIT_INTERNAL = 3
EXIT_MANUAL_REVIEW = 4
EXIT_DRIFT_PENALTY = 5

DEFAULT_COST_LEVELS = (0.1, 1.0, 5.0, 10.0, 20.0)


@dataclass
class CliConfig:
    data_dir: Path
    seed: int = 42
    output_format: str = "json"
    budget_mode: str = "added_plus_removed"


def _emit(cfg: CliConfig, payload: dict, table_lines=None):
    if cfg.output_format == "json" or table_lines is None:
        click.echo(json.dumps(payload, sort_keys=True, indent=2, default=str))
    else:
        for line in table_lines:
            click.echo(line)


def _resolve(cfg: CliConfig, path: str) -> Path:
    p = Path(path)
    if p.exists():
        return p
    candidate = cfg.data_dir / path
    if candidate.exists():
        return candidate
    raise click.UsageError(f"file not found: {path}")


def _load_series(cfg: CliConfig, path: str, split: str | None = None,
                 symbol: str | None = None) -> OhlcvSeries:
    series = load_csv(_resolve(cfg, path), symbol=symbol)
    if split:
        series = apply_split(series, FROZEN_SPLITS[split])
        if len(series) == 0:
            raise click.UsageError(f"split {split!r} leaves no bars in {path}")
    return series


@click.group()
@click.option(
    "--data",
    "data_dir",
    envvar="DRIFTGATE_DATA",
    default=".",
    show_default=True,
    help="Data directory for resolving series paths (env DRIFTGATE_DATA).",
)
@click.option("--seed", default=42, show_default=True, help="Seed for all sampled checks.")
@click.option(
    "--output-format",
    type=click.Choice(["json", "table"]),
    default="json",
    show_default=True,
)
@click.option(
    "--budget-mode",
    type=click.Choice(["added_plus_removed", "replaced-counts-1"]),
    default="added_plus_removed",
    show_default=True,
)
@click.pass_context
def cli(ctx, data_dir, seed, output_format, budget_mode):
    """Deterministic, governed backtesting harness with drift diagnostics."""
    ctx.obj = CliConfig(
        data_dir=Path(data_dir),
        seed=seed,
        output_format=output_format,
        budget_mode=budget_mode,
    )


@cli.command("validate-card")
@click.argument("card_path", type=click.Path(exists=True))
@click.pass_obj
def validate_card_cmd(cfg: CliConfig, card_path):
    """Parse and schema-check a strategy card."""
    raw_bytes = Path(card_path).read_bytes()
    parse_result, raw = gate_parse(raw_bytes)
    if not parse_result.passed:
        _emit(cfg, {"parse": parse_result.to_json(), "valid": False})
        sys.exit(EXIT_INVALID)
    card = StrategyCard.from_dict(raw)
    schema_result = gate_schema(card)
    payload = {
        "parse": parse_result.to_json(),
        "schema": schema_result.to_json(),
        "valid": schema_result.passed,
    }
    _emit(cfg, payload, [f"{k}: {v['status']}" for k, v in payload.items() if k != "valid"])
    sys.exit(EXIT_OK if schema_result.passed else EXIT_INVALID)


@cli.command("backtest")
@click.argument("card_path", type=click.Path(exists=True))
@click.argument("series_path")
@click.option("--capital", default=100_000.0, show_default=True)
@click.option("--seed", default=None, type=int, help="Overrides the global seed.")
@click.option("--cost-bps", default=0.0, show_default=True)
@click.option("--split", type=click.Choice(["train", "test"]), default=None)
@click.option("--symbol", default=None, help="Override the symbol inferred from the filename.")
@click.option(
    "--out",
    default=".",
    show_default=True,
    help="Directory receiving trade_log.csv and audit_log.csv.",
)
@click.pass_obj
def backtest_cmd(cfg: CliConfig, card_path, series_path, capital, seed, cost_bps, split, symbol, out):
    """Run one backtest; write the two mandatory logs and print metrics."""
    card = load_card(card_path)
    series = _load_series(cfg, series_path, split, symbol)
    run_cfg = RunConfig(
        initial_capital=capital,
        seed=seed if seed is not None else cfg.seed,
        cost_bps=cost_bps,
    )
    result = run_backtest(card, series, run_cfg)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    result.trade_log.save(out_dir / "trade_log.csv")
    result.audit_log.save(out_dir / "audit_log.csv")
    metrics = oos_metrics(
        result.equity, result.trade_log, cost_bps=cost_bps, frequency=series.frequency
    )
    payload = {"metrics": metrics, "trades": len(result.trade_log), "out": str(out_dir)}
    _emit(
        cfg,
        payload,
        [f"{k}: {v}" for k, v in metrics.items()] + [f"logs written to {out_dir}"],
    )


@cli.command("gates")
@click.argument("card_path", type=click.Path(exists=True))
@click.argument("series_path")
@click.option("--capital", default=100_000.0, show_default=True)
@click.option("--symbol", default=None, help="Override the symbol inferred from the filename.")
@click.pass_obj
def gates_cmd(cfg: CliConfig, card_path, series_path, capital, symbol):
    """Run the six validity gates; exit 0 iff all pass."""
    series = _load_series(cfg, series_path, symbol=symbol)
    run_cfg = RunConfig(initial_capital=capital, seed=cfg.seed)
    outcome = run_gates(Path(card_path).read_bytes(), series, run_cfg)
    payload = outcome.report.to_json_dict()
    table = [f"{name}: {payload[name]['status']}" for name in payload if name != "valid"]
    table.append(f"valid: {payload['valid']}")
    _emit(cfg, payload, table)
    sys.exit(EXIT_OK if outcome.valid else EXIT_INVALID)


@cli.command("drift")
@click.argument("card0_path", type=click.Path(exists=True))
@click.argument("cardk_path", type=click.Path(exists=True))
@click.option("--justify", type=click.Path(exists=True), default=None,
              help="JSON file mapping scenario kind to justification text.")
@click.option("--baseline-nan-unsafe", is_flag=True,
              help="Replay the baseline with partial-window indicators (pre-fix behavior).")
@click.pass_obj
def drift_cmd(cfg: CliConfig, card0_path, cardk_path, justify, baseline_nan_unsafe):
    """Layer-1 equivalence plus the micro-scenario regression suite."""
    card0 = load_card(card0_path)
    cardk = load_card(cardk_path)
    justifications = None
    if justify:
        justifications = json.loads(Path(justify).read_text())
    report = drift_check(
        card0,
        cardk,
        justifications=justifications,
        baseline_nan_unsafe=baseline_nan_unsafe,
    )
    payload = report.to_json_dict()
    _emit(cfg, payload, [f"decision: {payload['decision']}"])
    if report.decision is SuiteDecision.D1_PENALTY:
        sys.exit(EXIT_DRIFT_PENALTY)
    if report.decision is SuiteDecision.MANUAL_REVIEW:
        sys.exit(EXIT_MANUAL_REVIEW)
    sys.exit(EXIT_OK)


def _scorecard_from_run_dir(run_dir: Path, reviews_path: str | None) -> Scorecard:
    card = load_card(run_dir / "card.json")
    from .gates import lint_card_rules

    lint = lint_card_rules(card)
    trade_log_missing = not (run_dir / "trade_log.csv").exists()
    audit_log_missing = not (run_dir / "audit_log.csv").exists()

    audit = None
    completeness_penalty = 0.0
    missing_fields = 0
    if not audit_log_missing:
        audit = AuditLog.load(run_dir / "audit_log.csv")
        required = card.audit_requirements.audit_log_columns
        _result, completeness = gate_audit(audit, required)
        completeness_penalty = audit_completeness_penalty(completeness)
        missing_fields = sum(1 for c in required if not audit.has_column(c))
    if not trade_log_missing:
        header = (run_dir / "trade_log.csv").read_text().splitlines()
        if header:
            present = header[0].split(",")
            missing_fields += sum(
                1 for c in card.audit_requirements.trade_log_columns if c not in present
            )

    d3_raw, d3_subs = score_d3(
        D3Inputs.from_lint(
            lint,
            trade_log_missing=trade_log_missing,
            audit_log_missing=audit_log_missing,
            missing_required_fields=missing_fields,
            constant_rule=is_constant_rule(card.entry_rule) or is_constant_rule(card.exit_rule),
            unaudited_indicators=unaudited_indicator_usage(card),
            completeness_penalty=completeness_penalty,
        )
    )
    d4_static, d4_subs = score_d4(d4_inputs_from_card(card))
    gates_path = run_dir / "gates.json"
    d4_oos = None
    if gates_path.exists():
        gates_doc = json.loads(gates_path.read_text())
        d4_oos = score_d4_oos(gates_doc.get("exec", {}).get("status") == "PASS")
    d4_raw = combine_d4(d4_static, d4_oos)

    if reviews_path:
        matrix = ReviewMatrix.from_json_dict(json.loads(Path(reviews_path).read_text()))
        submission = card.strategy_name
        d1_raw = aggregate_reviews(matrix, submission, "D1")
        d2_raw = aggregate_reviews(matrix, submission, "D2")
    else:
        d1_raw = 10.0
        d2_raw = score_d2_from_audit(audit) if audit is not None else 0.0

    detail = {
        "D3_sub": d3_subs,
        "D4_sub": d4_subs,
        "D4_static": d4_static,
        "D4_oos": d4_oos,
    }
    return make_scorecard(d1_raw, d2_raw, d3_raw, d4_raw, detail)


@cli.command("score")
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--reviews", type=click.Path(exists=True), default=None,
              help="Review matrix JSON for D1/D2 aggregation.")
@click.pass_obj
def score_cmd(cfg: CliConfig, run_dir, reviews):
    """Score a run directory; writes scorecard.json next to its inputs."""
    run_dir = Path(run_dir)
    scorecard = _scorecard_from_run_dir(run_dir, reviews)
    (run_dir / "scorecard.json").write_text(scorecard.to_json())
    payload = scorecard.to_json_dict()
    _emit(cfg, payload, [f"{k}: {v}" for k, v in payload.items() if k != "raw"])


@cli.command("sweep-costs")
@click.argument("card_path", type=click.Path(exists=True))
@click.argument("series_path")
@click.option("--levels", default="0.1,1,5,10,20", show_default=True,
              help="Comma-separated cost levels in bps.")
@click.option("--capital", default=100_000.0, show_default=True)
@click.option("--symbol", default=None, help="Override the symbol inferred from the filename.")
@click.option("--out", default=".", show_default=True,
              help="Directory receiving sweep_costs.csv and sweep_costs.png.")
@click.pass_obj
def sweep_costs_cmd(cfg: CliConfig, card_path, series_path, levels, capital, symbol, out):
    """Re-cost one backtest's trades across a bps sweep."""
    try:
        level_values = [float(x) for x in levels.split(",") if x.strip()]
    except ValueError:
        raise click.UsageError(f"bad --levels value: {levels!r}")
    card = load_card(card_path)
    series = _load_series(cfg, series_path, symbol=symbol)
    base = run_backtest(card, series, RunConfig(initial_capital=capital, seed=cfg.seed))

    rows = []
    for level in level_values:
        trades = apply_costs(base.trade_log, level)
        equity = cost_adjusted_equity(base.equity, base.trade_log, level)
        metrics = oos_metrics(equity, trades, cost_bps=level, frequency=series.frequency)
        rows.append(metrics)

    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "sweep_costs.csv"
    fields = ("cost_bps", "net_pnl", "sharpe", "max_drawdown", "turnover", "n_trades")
    with csv_path.open("w") as fh:
        fh.write(",".join(fields) + "\n")
        for row in rows:
            fh.write(",".join(f"{row[f]:.10g}" if isinstance(row[f], float) else str(row[f]) for f in fields) + "\n")
    fig_path = reporting.save_cost_sweep_figure(
        [r["cost_bps"] for r in rows], [r["net_pnl"] for r in rows], out_dir / "sweep_costs.png"
    )
    payload = {"levels": rows, "csv": str(csv_path), "figure": str(fig_path)}
    _emit(
        cfg,
        payload,
        [",".join(fields)]
        + [",".join(f"{r[f]:.6g}" if isinstance(r[f], float) else str(r[f]) for f in fields) for r in rows],
    )


@cli.command("iterate")
@click.argument("state_dir", type=click.Path(file_okay=False))
@click.option("--submit", "submit_path", type=click.Path(exists=True), required=True,
              help="Strategy card for this iteration.")
@click.option("--series", "series_path", default=None,
              help="Series CSV; required when the state directory is new.")
@click.option("--justify", type=click.Path(exists=True), default=None)
@click.option("--reviews", type=click.Path(exists=True), default=None)
@click.option("--accept-justified", is_flag=True,
              help="Operator acknowledgment for justified trace divergences.")
@click.option("--baseline-nan-unsafe", is_flag=True,
              help="Replay the baseline with partial-window indicators (pre-fix behavior).")
@click.option("--capital", default=100_000.0, show_default=True)
@click.option("--symbol", default=None, help="Override the symbol inferred from the filename.")
@click.pass_obj
def iterate_cmd(cfg: CliConfig, state_dir, submit_path, series_path, justify, reviews,
                accept_justified, baseline_nan_unsafe, capital, symbol):
    """Advance one build-test-patch iteration with a submitted card."""
    state_dir = Path(state_dir)
    state_dir.mkdir(parents=True, exist_ok=True)
    state_path = state_dir / "state.json"
    config_path = state_dir / "config.json"

    if state_path.exists():
        state = IterationState.from_json_dict(json.loads(state_path.read_text()))
        config = json.loads(config_path.read_text())
    else:
        if not series_path:
            raise click.UsageError("--series is required for a new state directory")
        state = IterationState()
        config = {"series": str(_resolve(cfg, series_path)), "capital": capital,
                  "symbol": symbol}
        config_path.write_text(json.dumps(config, indent=2))

    series = load_csv(Path(config["series"]), symbol=config.get("symbol"))
    run_cfg = RunConfig(initial_capital=config.get("capital", capital), seed=cfg.seed)
    card_bytes = Path(submit_path).read_bytes()
    outcome = run_gates(card_bytes, series, run_cfg)

    if outcome.card is None or not outcome.report.schema.passed or not outcome.report.parse.passed:
        _emit(cfg, outcome.report.to_json_dict())
        sys.exit(EXIT_INVALID)
    card = outcome.card
    card_dict = card.to_dict()

    justifications = json.loads(Path(justify).read_text()) if justify else None
    drift_report = None
    drifted = False
    manual_review = False
    if state.baseline_card is not None:
        baseline = StrategyCard.from_dict(state.baseline_card)
        drift_report = drift_check(
            baseline, card, justifications=justifications,
            baseline_nan_unsafe=baseline_nan_unsafe,
        )
        if drift_report.decision is SuiteDecision.D1_PENALTY:
            drifted = True
        elif drift_report.decision is SuiteDecision.MANUAL_REVIEW and not accept_justified:
            manual_review = True

    scorecard = _scorecard_for_iteration(card, outcome, reviews)
    if drift_report is not None and not drift_report.layer1.equivalent:
        scorecard = apply_drift_penalty(scorecard, drift_report.layer1)

    bundle = build_evidence_bundle(
        iteration=state.k,
        card_dict=card_dict,
        scorecard=scorecard,
        gate_report=outcome.report,
        drift_report=drift_report,
        lint=outcome.lint,
        oos_summary=(
            oos_metrics(
                outcome.base_result.equity,
                outcome.base_result.trade_log,
                frequency=series.frequency,
            )
            if outcome.base_result is not None
            else {}
        ),
    )
    iter_dir = state_dir / "runs" / f"iter{state.k}"
    digest = write_iteration_artifacts(
        iter_dir,
        card_dict,
        bundle,
        outcome.report,
        scorecard,
        trade_log=outcome.base_result.trade_log if outcome.base_result else None,
        audit_log=outcome.base_result.audit_log if outcome.base_result else None,
    )

    if manual_review:
        _emit(cfg, {"state": state.to_json_dict(), "decision": "MANUAL_REVIEW",
                    "bundle": str(iter_dir / "bundle.json")})
        sys.exit(EXIT_MANUAL_REVIEW)

    new_state = iteration_step(
        state, scorecard, drifted, submitted_card=card_dict, bundle_digest=digest
    )
    state_path.write_text(json.dumps(new_state.to_json_dict(), indent=2))

    prompts_dir = state_dir / "prompts"
    prompts_dir.mkdir(exist_ok=True)
    (prompts_dir / f"iter{state.k}.txt").write_text(render_iteration_prompt(bundle))

    payload = {
        "state": new_state.to_json_dict(),
        "scorecard": scorecard.to_json_dict(),
        "gates_valid": outcome.valid,
        "bundle": str(iter_dir / "bundle.json"),
    }
    _emit(cfg, payload, [f"status: {new_state.status}", f"k: {new_state.k}"])
    if new_state.status == STATUS_INVALIDATED:
        sys.exit(EXIT_DRIFT_PENALTY)
    sys.exit(EXIT_OK if outcome.valid else EXIT_INVALID)


def _scorecard_for_iteration(card, outcome, reviews_path) -> Scorecard:
    from .gates import lint_card_rules

    lint = outcome.lint
    base = outcome.base_result
    completeness_penalty = (
        audit_completeness_penalty(outcome.completeness)
        if outcome.completeness is not None
        else 0.0
    )
    d3_raw, d3_subs = score_d3(
        D3Inputs.from_lint(
            lint,
            trade_log_missing=base is None,
            audit_log_missing=base is None,
            constant_rule=is_constant_rule(card.entry_rule) or is_constant_rule(card.exit_rule),
            unaudited_indicators=unaudited_indicator_usage(card),
            completeness_penalty=completeness_penalty,
        )
    )
    d4_static, d4_subs = score_d4(d4_inputs_from_card(card))
    d4_raw = combine_d4(d4_static, score_d4_oos(base is not None))
    if reviews_path:
        matrix = ReviewMatrix.from_json_dict(json.loads(Path(reviews_path).read_text()))
        d1_raw = aggregate_reviews(matrix, card.strategy_name, "D1")
        d2_raw = aggregate_reviews(matrix, card.strategy_name, "D2")
    else:
        d1_raw = 10.0
        d2_raw = score_d2_from_audit(base.audit_log) if base is not None else 0.0
    return make_scorecard(
        d1_raw, d2_raw, d3_raw, d4_raw,
        {"D3_sub": d3_subs, "D4_sub": d4_subs, "D4_static": d4_static},
    )


@cli.command("report")
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@click.pass_obj
def report_cmd(cfg: CliConfig, run_dir):
    """Consolidated summary of a run directory: report.json, summary.csv,
    and figures rendered to files."""
    run_dir = Path(run_dir)
    payload: dict = {"run_dir": str(run_dir)}
    summary_rows: list = []
    figures: list = []

    audit_path = run_dir / "audit_log.csv"
    trade_path = run_dir / "trade_log.csv"
    if audit_path.exists():
        audit = AuditLog.load(audit_path)
        equity = audit.float_column("equity")
        trades = TradeLog.load(trade_path) if trade_path.exists() else TradeLog()
        metrics = oos_metrics(equity, trades)
        payload["metrics"] = metrics
        summary_rows.extend(
            (k, v) for k, v in metrics.items() if isinstance(v, (int, float))
        )
        ts = audit.timestamps
        figures.append(
            reporting.save_equity_figure(ts, equity, run_dir / "figures" / "equity_curve.png")
        )
        figures.append(
            reporting.save_drawdown_figure(ts, equity, run_dir / "figures" / "drawdown.png")
        )

    scorecard_path = run_dir / "scorecard.json"
    if scorecard_path.exists():
        scorecard_doc = json.loads(scorecard_path.read_text())
        payload["scorecard"] = scorecard_doc
        summary_rows.extend(
            (d, scorecard_doc[d]) for d in ("D1", "D2", "D3", "D4") if d in scorecard_doc
        )
        figures.append(
            reporting.save_score_figure(scorecard_doc, run_dir / "figures" / "scorecard.png")
        )

    gates_path = run_dir / "gates.json"
    if gates_path.exists():
        payload["gates"] = json.loads(gates_path.read_text())

    sweep_path = run_dir / "sweep_costs.csv"
    if sweep_path.exists():
        lines = sweep_path.read_text().splitlines()
        header = lines[0].split(",")
        rows = [dict(zip(header, line.split(","))) for line in lines[1:] if line]
        payload["cost_sweep"] = rows
        figures.append(
            reporting.save_cost_sweep_figure(
                [float(r["cost_bps"]) for r in rows],
                [float(r["net_pnl"]) for r in rows],
                run_dir / "figures" / "cost_sweep.png",
            )
        )

    summary_path = run_dir / "summary.csv"
    with summary_path.open("w") as fh:
        fh.write("metric,value\n")
        for key, value in summary_rows:
            fh.write(f"{key},{value}\n")
    payload["summary_csv"] = str(summary_path)
    payload["figures"] = [str(f) for f in figures]
    (run_dir / "report.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2, default=str)
    )
    _emit(cfg, payload, [f"{k},{v}" for k, v in summary_rows])


def main():
    try:
        cli(standalone_mode=True)
    except SystemExit:
        raise
    except (DriftgateError, CardValidationError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_INVALID)
    except Exception as exc:  # internal error contract: exit 3
        click.echo(f"internal error: {type(exc).__name__}: {exc}", err=True)
        sys.exit(EXIT_INTERNAL)


if __name__ == "__main__":
    main()

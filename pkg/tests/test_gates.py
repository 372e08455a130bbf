import copy
import json

import numpy as np
import pytest

from driftgate.cards import StrategyCard
from driftgate.engine import AuditLog, RunConfig, TradeLog, run_backtest
from driftgate.fixtures import load_fixture_card_bytes
from driftgate.gates import (
    DETERMINISM_SEEDS,
    audit_completeness_penalty,
    compare_trade_logs,
    gate_audit,
    gate_determinism,
    gate_parse,
    gate_schema,
    run_gates,
    traceability_check,
)


def card_bytes(raw: dict) -> bytes:
    return json.dumps(raw).encode()


@pytest.fixture(scope="module")
def clean_outcome(scenario_series_module):
    return run_gates(
        load_fixture_card_bytes("bollinger_mean_reversion"),
        scenario_series_module["clean_golden_cross"],
    )


@pytest.fixture(scope="module")
def scenario_series_module():
    from driftgate.data.scenarios import SyntheticScenario, gen_micro_scenario

    return {
        kind: gen_micro_scenario(SyntheticScenario(kind=kind))
        for kind in ("clean_golden_cross", "flat_market")
    }


class TestGateParse:
    def test_valid_json(self, bollinger_dict):
        result, raw = gate_parse(card_bytes(bollinger_dict))
        assert result.passed
        assert raw["strategy_name"] == "bollinger_mean_reversion"

    def test_truncated_json_reports_position(self, bollinger_dict):
        data = card_bytes(bollinger_dict)[:-20]
        result, raw = gate_parse(data)
        assert result.status == "FAIL"
        assert raw is None
        assert "line" in result.messages[0]

    def test_wrong_top_level_type(self):
        result, raw = gate_parse(b"[1, 2, 3]")
        assert result.status == "FAIL"
        assert "JSON object" in result.messages[0]


class TestGateSchema:
    def test_complete_card_passes(self, bollinger_card):
        assert gate_schema(bollinger_card).passed

    def test_missing_audit_requirements(self, bollinger_dict):
        raw = copy.deepcopy(bollinger_dict)
        del raw["audit_requirements"]
        result = gate_schema(StrategyCard.from_dict(raw))
        assert result.status == "FAIL"
        assert "missing field: audit_requirements" in result.messages

    def test_unparseable_rule_fails_with_parser_message(self, bollinger_dict):
        raw = copy.deepcopy(bollinger_dict)
        raw["entry_rule"] = "cross_below(close"
        result = gate_schema(StrategyCard.from_dict(raw))
        assert result.status == "FAIL"
        assert any("entry_rule" in m for m in result.messages)


class TestGateDeterminism:
    def test_pure_card_three_equal_digests(self, bollinger_card, scenario_series):
        result, digests = gate_determinism(
            bollinger_card, scenario_series["clean_golden_cross"], RunConfig()
        )
        assert result.passed
        assert len(set(digests.values())) == 1
        assert set(digests) == set(DETERMINISM_SEEDS)

    def test_random_node_fails_with_mismatch_report(self, bollinger_dict, scenario_series):
        raw = copy.deepcopy(bollinger_dict)
        raw["entry_rule"] = "random() > 0.7"
        card = StrategyCard.from_dict(raw)
        result, digests = gate_determinism(
            card, scenario_series["clean_golden_cross"], RunConfig()
        )
        assert result.status == "FAIL"
        assert "DETERMINISM FAILURE" in result.messages[0]
        assert "(MISMATCH)" in result.messages[0]
        assert len(set(digests.values())) > 1

    def test_sub_tolerance_pnl_perturbation_passes(self, bollinger_card, scenario_series):
        base = run_backtest(bollinger_card, scenario_series["clean_golden_cross"])
        import dataclasses

        perturbed_trades = tuple(
            dataclasses.replace(t, pnl=t.pnl * (1 + 1e-9)) for t in base.trade_log
        )
        messages = compare_trade_logs(base.trade_log, TradeLog(perturbed_trades))
        assert messages == []

    def test_timestamp_divergence_fails(self, bollinger_card, scenario_series):
        base = run_backtest(bollinger_card, scenario_series["clean_golden_cross"])
        import dataclasses

        shifted = tuple(
            dataclasses.replace(t, entry_datetime=t.entry_datetime + np.timedelta64(1, "D"))
            for t in base.trade_log
        )
        messages = compare_trade_logs(base.trade_log, TradeLog(shifted))
        assert any("entry time differs" in m for m in messages)


class TestGateAudit:
    def test_full_log_passes_at_one(self, bollinger_card, scenario_series):
        result = run_backtest(bollinger_card, scenario_series["clean_golden_cross"])
        required = bollinger_card.audit_requirements.audit_log_columns
        gate, completeness = gate_audit(result.audit_log, required)
        assert gate.passed
        assert completeness == 1.0

    def test_missing_constraint_check_column(self, bollinger_card, scenario_series):
        result = run_backtest(bollinger_card, scenario_series["clean_golden_cross"])
        audit = result.audit_log
        stripped = AuditLog(
            audit.timestamps,
            {k: v for k, v in audit.columns.items() if k != "constraint_check"},
            [c for c in audit.column_order if c != "constraint_check"],
        )
        required = bollinger_card.audit_requirements.audit_log_columns
        gate, _ = gate_audit(stripped, required)
        assert gate.status == "FAIL"
        assert "AUDIT_LOG missing required column: constraint_check" in gate.messages

    def test_completeness_090_fails_with_exact_penalty(self, bollinger_card, scenario_series):
        result = run_backtest(bollinger_card, scenario_series["clean_golden_cross"])
        audit = result.audit_log
        # 9 counted columns (datetime through constraint_check) x 50 rows;
        # blank 10% of those cells in the blankable string/value columns
        columns = {k: np.array([str(x) for x in v], dtype=object) for k, v in audit.columns.items()}
        counted = [c for c in audit.column_order if c not in ("datetime", "event_type", "message")]
        total = len(audit) * (len(counted) + 1)  # +1: datetime is counted, never blank
        to_blank = int(round(0.10 * total))
        blanked = 0
        for name in counted:
            for i in range(len(audit)):
                if blanked < to_blank:
                    columns[name][i] = ""
                    blanked += 1
        doctored = AuditLog(audit.timestamps, columns, audit.column_order)
        required = bollinger_card.audit_requirements.audit_log_columns
        gate, completeness = gate_audit(doctored, required)
        assert gate.status == "FAIL"
        assert completeness == pytest.approx(0.90)
        assert audit_completeness_penalty(completeness) == pytest.approx(-0.10)

    def test_penalty_zero_at_threshold(self):
        assert audit_completeness_penalty(0.95) == 0.0
        assert audit_completeness_penalty(1.0) == 0.0
        assert audit_completeness_penalty(0.90) == pytest.approx(-2.0 * 0.05)

    def test_extra_columns_never_lower_completeness(self, bollinger_card, scenario_series):
        result = run_backtest(bollinger_card, scenario_series["clean_golden_cross"])
        audit = result.audit_log
        columns = dict(audit.columns)
        columns["debug_notes"] = np.array([""] * len(audit), dtype=object)
        widened = AuditLog(audit.timestamps, columns, audit.column_order + ["debug_notes"])
        required = bollinger_card.audit_requirements.audit_log_columns
        gate, completeness = gate_audit(widened, required)
        assert gate.passed
        assert completeness == 1.0


class TestTraceability:
    def test_engine_logs_pass(self, bollinger_card):
        from driftgate.data.scenarios import gen_random_walk

        series = gen_random_walk(500, seed=31, frequency="daily", vol=0.012)
        result = run_backtest(bollinger_card, series)
        assert len(result.trade_log) >= 3
        gate, sample = traceability_check(result.trade_log, result.audit_log, seed=42)
        assert gate.passed
        assert len(sample) == min(10, len(result.trade_log))

    def test_forced_flat_entry_signal_fails(self, bollinger_card, scenario_series):
        result = run_backtest(bollinger_card, scenario_series["clean_golden_cross"])
        audit = result.audit_log
        columns = dict(audit.columns)
        signal = np.array(columns["signal"], dtype=object)
        signal[25] = "FLAT"
        columns["signal"] = signal
        doctored = AuditLog(audit.timestamps, columns, audit.column_order)
        gate, _ = traceability_check(result.trade_log, doctored)
        assert gate.status == "FAIL"
        assert "TRACEABILITY ERROR" in gate.messages[0]
        assert "MISMATCH" in gate.messages[0]

    def test_perturbed_pnl_fails_identity(self, bollinger_card, scenario_series):
        import dataclasses

        result = run_backtest(bollinger_card, scenario_series["clean_golden_cross"])
        bad = tuple(
            dataclasses.replace(t, pnl=t.pnl * 1.01) for t in result.trade_log
        )
        gate, _ = traceability_check(TradeLog(bad), result.audit_log)
        assert gate.status == "FAIL"
        assert any("pnl" in m for m in gate.messages)

    def test_sampling_is_seed_deterministic(self, bollinger_card):
        from driftgate.data.scenarios import gen_random_walk

        series = gen_random_walk(2000, seed=13, frequency="daily", vol=0.015)
        result = run_backtest(bollinger_card, series)
        assert len(result.trade_log) > 10
        _, sample_a = traceability_check(result.trade_log, result.audit_log, seed=9)
        _, sample_b = traceability_check(result.trade_log, result.audit_log, seed=9)
        _, sample_c = traceability_check(result.trade_log, result.audit_log, seed=10)
        assert sample_a == sample_b
        assert len(sample_a) == 10
        assert sample_a != sample_c


class TestPipeline:
    def test_clean_bollinger_all_pass(self, clean_outcome):
        report = clean_outcome.report
        assert report.valid
        for gate in ("parse", "schema", "exec", "determinism", "anti_leak", "audit"):
            assert report.gate(gate).status == "PASS"

    def test_parse_failure_short_circuits(self, scenario_series):
        outcome = run_gates(b"{not json", scenario_series["flat_market"])
        assert outcome.report.parse.status == "FAIL"
        for gate in ("schema", "exec", "determinism", "anti_leak", "audit"):
            assert outcome.report.gate(gate).status == "SKIPPED"
        assert not outcome.valid

    def test_schema_failure_short_circuits(self, bollinger_dict, scenario_series):
        raw = copy.deepcopy(bollinger_dict)
        del raw["exit_rule"]
        outcome = run_gates(card_bytes(raw), scenario_series["flat_market"])
        assert outcome.report.schema.status == "FAIL"
        assert outcome.report.exec.status == "SKIPPED"

    def test_leaking_card_fails_anti_leak(self, bollinger_dict, scenario_series):
        raw = copy.deepcopy(bollinger_dict)
        raw["entry_rule"] = "shift(close, -1) > close"
        outcome = run_gates(card_bytes(raw), scenario_series["flat_market"])
        report = outcome.report
        assert report.anti_leak.status == "FAIL"
        assert "Access beyond bar" in report.anti_leak.messages[0]
        assert report.determinism.status == "SKIPPED"
        assert report.audit.status == "SKIPPED"
        assert not report.valid

    def test_static_findings_alone_pass_with_warnings(self, bollinger_dict, scenario_series):
        raw = copy.deepcopy(bollinger_dict)
        # lint-flagged rolling, runtime clean
        raw["exit_rule"] = "close >= rolling(close, $lookback_N)"
        outcome = run_gates(card_bytes(raw), scenario_series["clean_golden_cross"])
        assert outcome.report.anti_leak.status == "PASS"
        assert any("ROLLING_NO_MINP" in m for m in outcome.report.anti_leak.messages)
        assert outcome.valid

    def test_runtime_error_fails_exec(self, bollinger_dict, scenario_series):
        raw = copy.deepcopy(bollinger_dict)
        raw["entry_rule"] = "close < $absent_lower_band"  # unbound at run time
        del raw["parameters"]["multiplier_k"]
        outcome = run_gates(card_bytes(raw), scenario_series["flat_market"])
        assert outcome.report.exec.status == "FAIL"
        assert outcome.report.determinism.status == "SKIPPED"

    def test_limit_exceeded_fails_exec(self, scenario_series):
        outcome = run_gates(
            load_fixture_card_bytes("bollinger_mean_reversion"),
            scenario_series["flat_market"],
            RunConfig(max_bars=10),
        )
        assert outcome.report.exec.status == "FAIL"
        assert "LIMIT_EXCEEDED" in outcome.report.exec.messages[0]

    def test_valid_bit_pure_function_of_results(self, clean_outcome):
        report = clean_outcome.report
        doc = report.to_json_dict()
        assert doc["valid"] == all(
            doc[g]["status"] == "PASS"
            for g in ("parse", "schema", "exec", "determinism", "anti_leak", "audit")
        )

    def test_json_shape(self, clean_outcome):
        doc = json.loads(clean_outcome.report.to_json())
        assert set(doc) == {"parse", "schema", "exec", "determinism", "anti_leak", "audit", "valid"}
        assert doc["parse"] == {"status": "PASS", "messages": []}

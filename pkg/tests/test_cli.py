import json

import pytest
from click.testing import CliRunner

from driftgate.cli import cli
from driftgate.data import save_csv
from driftgate.data.scenarios import SyntheticScenario, gen_micro_scenario, gen_random_walk
from driftgate.fixtures import card_path


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    save_csv(
        gen_micro_scenario(SyntheticScenario(kind="clean_golden_cross")),
        root / "clean.csv",
    )
    save_csv(
        gen_random_walk(730, seed=7, frequency="daily", start="2024-01-01T00:00:00", vol=0.01),
        root / "two_years.csv",
    )
    bad_card = root / "leaky.json"
    doc = json.loads(card_path("bollinger_mean_reversion").read_text())
    doc["entry_rule"] = "shift(close, -1) > close"
    bad_card.write_text(json.dumps(doc))
    truncated = root / "broken.json"
    truncated.write_bytes(card_path("bollinger_mean_reversion").read_bytes()[:50])
    return root


@pytest.fixture
def runner():
    return CliRunner()


def bollinger() -> str:
    return str(card_path("bollinger_mean_reversion"))


class TestValidateCard:
    def test_valid_card_exit_zero(self, runner):
        result = runner.invoke(cli, ["validate-card", bollinger()])
        assert result.exit_code == 0

    def test_invalid_json_exit_one(self, runner, workspace):
        result = runner.invoke(cli, ["validate-card", str(workspace / "broken.json")])
        assert result.exit_code == 1

    def test_missing_file_usage_error(self, runner):
        result = runner.invoke(cli, ["validate-card", "/nonexistent.json"])
        assert result.exit_code == 2


class TestGates:
    def test_clean_fixture_exit_zero(self, runner, workspace):
        result = runner.invoke(
            cli, ["gates", bollinger(), str(workspace / "clean.csv"), "--symbol", "SYNTH"]
        )
        assert result.exit_code == 0, result.output
        doc = json.loads(result.output)
        assert doc["valid"] is True

    def test_leaking_card_exit_one_with_anti_leak_fail(self, runner, workspace):
        result = runner.invoke(
            cli, ["gates", str(workspace / "leaky.json"), str(workspace / "clean.csv")]
        )
        assert result.exit_code == 1
        doc = json.loads(result.output)
        assert doc["anti_leak"]["status"] == "FAIL"

    def test_json_output_sorted_keys(self, runner, workspace):
        result = runner.invoke(
            cli, ["gates", bollinger(), str(workspace / "clean.csv"), "--symbol", "SYNTH"]
        )
        doc = json.loads(result.output)
        assert list(doc) == sorted(doc)


class TestBacktest:
    def test_writes_logs_and_prints_metrics(self, runner, workspace, tmp_path):
        out = tmp_path / "run"
        result = runner.invoke(
            cli,
            ["backtest", bollinger(), str(workspace / "clean.csv"),
             "--symbol", "SYNTH", "--out", str(out)],
        )
        assert result.exit_code == 0, result.output
        assert (out / "trade_log.csv").exists()
        assert (out / "audit_log.csv").exists()
        doc = json.loads(result.output)
        assert doc["trades"] == 1

    def test_split_filters_bars(self, runner, workspace, tmp_path):
        out = tmp_path / "split_run"
        result = runner.invoke(
            cli,
            [
                "backtest", bollinger(), str(workspace / "two_years.csv"),
                "--split", "train", "--out", str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        audit_rows = (out / "audit_log.csv").read_text().splitlines()[1:]
        assert len(audit_rows) == 366  # 2024 is a leap year
        assert all(row.startswith("2024-") for row in audit_rows)

    def test_data_dir_resolution(self, runner, workspace, tmp_path):
        result = runner.invoke(
            cli,
            [
                "--data", str(workspace), "backtest", bollinger(), "clean.csv",
                "--symbol", "SYNTH", "--out", str(tmp_path / "o"),
            ],
        )
        assert result.exit_code == 0, result.output


class TestDrift:
    def test_no_drift_exit_zero(self, runner):
        result = runner.invoke(cli, ["drift", bollinger(), bollinger()])
        assert result.exit_code == 0, result.output
        assert json.loads(result.output)["decision"] == "NO_DRIFT"

    def test_case_b_exit_five(self, runner):
        result = runner.invoke(
            cli, ["drift", bollinger(), str(card_path("bollinger_case_b"))]
        )
        assert result.exit_code == 5
        doc = json.loads(result.output)
        assert doc["decision"] == "D1_PENALTY"
        assert "entry_rule" in doc["layer1"]["drift_flag"]

    def test_case_a_exit_four(self, runner, tmp_path):
        justify = tmp_path / "justify.json"
        justify.write_text(json.dumps({"nan_period": "entries wait for full windows now"}))
        result = runner.invoke(
            cli,
            [
                "drift", bollinger(), bollinger(),
                "--justify", str(justify), "--baseline-nan-unsafe",
            ],
        )
        assert result.exit_code == 4
        assert json.loads(result.output)["decision"] == "MANUAL_REVIEW"


class TestSweepCosts:
    def test_table_csv_and_figure(self, runner, workspace, tmp_path):
        out = tmp_path / "sweep"
        result = runner.invoke(
            cli,
            [
                "sweep-costs", bollinger(), str(workspace / "two_years.csv"),
                "--symbol", "SYNTH", "--levels", "0.1,1,5,10,20", "--out", str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        assert (out / "sweep_costs.csv").exists()
        assert (out / "sweep_costs.png").exists()
        doc = json.loads(result.output)
        pnls = [row["net_pnl"] for row in doc["levels"]]
        assert pnls == sorted(pnls, reverse=True)
        assert [row["cost_bps"] for row in doc["levels"]] == [0.1, 1.0, 5.0, 10.0, 20.0]

    def test_bad_levels_usage_error(self, runner, workspace):
        result = runner.invoke(
            cli,
            ["sweep-costs", bollinger(), str(workspace / "clean.csv"), "--levels", "a,b"],
        )
        assert result.exit_code == 2


class TestScoreAndReport:
    def test_score_then_report(self, runner, workspace, tmp_path):
        run_dir = tmp_path / "run"
        backtest = runner.invoke(
            cli,
            ["backtest", bollinger(), str(workspace / "clean.csv"),
             "--symbol", "SYNTH", "--out", str(run_dir)],
        )
        assert backtest.exit_code == 0
        (run_dir / "card.json").write_bytes(card_path("bollinger_mean_reversion").read_bytes())

        score = runner.invoke(cli, ["score", str(run_dir)])
        assert score.exit_code == 0, score.output
        scorecard = json.loads((run_dir / "scorecard.json").read_text())
        assert scorecard["D3"] == 1.0
        assert scorecard["D2"] == 1.0

        report = runner.invoke(cli, ["report", str(run_dir)])
        assert report.exit_code == 0, report.output
        assert (run_dir / "summary.csv").exists()
        assert (run_dir / "report.json").exists()
        assert (run_dir / "figures" / "equity_curve.png").exists()
        assert (run_dir / "figures" / "drawdown.png").exists()
        assert (run_dir / "figures" / "scorecard.png").exists()
        summary = (run_dir / "summary.csv").read_text().splitlines()
        assert summary[0] == "metric,value"
        assert len(summary) > 3

    def test_score_with_reviews(self, runner, workspace, tmp_path):
        run_dir = tmp_path / "review_run"
        runner.invoke(
            cli,
            ["backtest", bollinger(), str(workspace / "clean.csv"),
             "--symbol", "SYNTH", "--out", str(run_dir)],
        )
        (run_dir / "card.json").write_bytes(card_path("bollinger_mean_reversion").read_bytes())
        reviews = tmp_path / "reviews.json"
        reviews.write_text(
            json.dumps(
                {
                    "reviews": [
                        {"reviewer": "modela", "submission": "bollinger_mean_reversion",
                         "scores": {"D1": 9.0, "D2": 8.0}},
                        {"reviewer": "modelb", "submission": "bollinger_mean_reversion",
                         "scores": {"D1": 8.0, "D2": 9.0}},
                        {"reviewer": "bollinger_mean_reversion",
                         "submission": "bollinger_mean_reversion",
                         "scores": {"D1": 10.0, "D2": 10.0}},
                    ]
                }
            )
        )
        result = runner.invoke(cli, ["score", str(run_dir), "--reviews", str(reviews)])
        assert result.exit_code == 0, result.output
        scorecard = json.loads((run_dir / "scorecard.json").read_text())
        assert scorecard["D1"] == pytest.approx(0.85)  # self review excluded
        assert scorecard["D2"] == pytest.approx(0.85)


class TestIterate:
    def test_three_iterations_to_targets(self, runner, workspace, tmp_path):
        state_dir = tmp_path / "loop"
        first = runner.invoke(
            cli,
            [
                "iterate", str(state_dir), "--submit", bollinger(),
                "--series", str(workspace / "clean.csv"), "--symbol", "SYNTH",
            ],
        )
        assert first.exit_code == 0, first.output
        state = json.loads((state_dir / "state.json").read_text())
        assert state["status"] == "DONE_TARGETS_MET"
        assert (state_dir / "runs" / "iter0" / "bundle.json").exists()
        assert (state_dir / "prompts" / "iter0.txt").exists()

    def test_drifted_submission_exit_five_baseline_frozen(self, runner, workspace, tmp_path):
        state_dir = tmp_path / "drifting"
        base_state = {
            "k": 1,
            "baseline_card": json.loads(card_path("bollinger_mean_reversion").read_text()),
            "history": ["seed"],
            "status": "CONTINUE",
        }
        state_dir.mkdir()
        (state_dir / "state.json").write_text(json.dumps(base_state))
        (state_dir / "config.json").write_text(
            json.dumps({"series": str(workspace / "clean.csv"), "capital": 100000.0,
                        "symbol": "SYNTH"})
        )
        result = runner.invoke(
            cli,
            ["iterate", str(state_dir), "--submit", str(card_path("bollinger_case_b"))],
        )
        assert result.exit_code == 5, result.output
        after = json.loads((state_dir / "state.json").read_text())
        assert after["status"] == "INVALIDATED"
        assert after["k"] == 1
        assert after["baseline_card"] == base_state["baseline_card"]
        scorecard = json.loads(
            (state_dir / "runs" / "iter1" / "scorecard.json").read_text()
        )
        assert scorecard["D1"] == 0.0
        assert any(f.startswith("DRIFT_DETECTED") for f in scorecard["flags"])

    def test_new_state_requires_series(self, runner, tmp_path):
        result = runner.invoke(
            cli, ["iterate", str(tmp_path / "fresh"), "--submit", bollinger()]
        )
        assert result.exit_code == 2

    def test_manual_review_blocks_until_accepted(self, runner, workspace, tmp_path):
        state_dir = tmp_path / "reviewing"
        state_dir.mkdir()
        base_state = {
            "k": 1,
            "baseline_card": json.loads(card_path("bollinger_mean_reversion").read_text()),
            "history": ["seed"],
            "status": "CONTINUE",
        }
        (state_dir / "state.json").write_text(json.dumps(base_state))
        (state_dir / "config.json").write_text(
            json.dumps({"series": str(workspace / "clean.csv"), "capital": 100000.0,
                        "symbol": "SYNTH"})
        )
        justify = tmp_path / "justify.json"
        justify.write_text(json.dumps({"nan_period": "waits for a full window now"}))
        args = [
            "iterate", str(state_dir), "--submit", bollinger(),
            "--justify", str(justify), "--baseline-nan-unsafe",
        ]
        blocked = runner.invoke(cli, args)
        assert blocked.exit_code == 4, blocked.output
        # state untouched while the review is pending
        assert json.loads((state_dir / "state.json").read_text()) == base_state

        accepted = runner.invoke(cli, args + ["--accept-justified"])
        assert accepted.exit_code == 0, accepted.output
        after = json.loads((state_dir / "state.json").read_text())
        assert after["status"] == "DONE_TARGETS_MET"


class TestExitCodes:
    def test_internal_error_exits_three(self, tmp_path):
        import subprocess
        import sys

        run_dir = tmp_path / "corrupt"
        run_dir.mkdir()
        (run_dir / "audit_log.csv").write_text("datetime,equity\ngarbage,notanumber\n")
        proc = subprocess.run(
            [sys.executable, "-m", "driftgate.cli", "report", str(run_dir)],
            capture_output=True, text=True,
        )
        assert proc.returncode == 3
        assert "internal error" in proc.stderr

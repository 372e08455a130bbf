import itertools
import math

import numpy as np
import pytest

from driftgate.engine import run_backtest
from driftgate.scoring import (
    D3Inputs,
    D4Inputs,
    NoPeerReviewsError,
    ReviewMatrix,
    StrategyMeta,
    aggregate_reviews,
    bootstrap_ci,
    complexity_score,
    d4_inputs_from_card,
    deflated_sharpe,
    is_constant_rule,
    kendall_tau,
    make_scorecard,
    oos_metrics,
    pbo_cscv,
    score_d2_from_audit,
    score_d3,
    score_d4,
    self_bias,
    spearman_rho,
    token_cost,
    unaudited_indicator_usage,
    vendor_bias,
)


class TestScoreD3:
    def test_clean_submission_is_ten(self):
        total, subs = score_d3(D3Inputs())
        assert total == 10.0
        assert subs == {"S_det": 10.0, "S_leak": 10.0, "S_log": 10.0, "S_qual": 10.0}

    def test_missing_trade_log_is_9_25(self):
        # S_log drops to 7: 0.30*10 + 0.30*10 + 0.25*7 + 0.15*10 = 9.25
        total, subs = score_d3(D3Inputs(trade_log_missing=True))
        assert subs["S_log"] == 7.0
        assert total == pytest.approx(9.25, abs=1e-12)

    def test_now_plus_negative_shift_is_8_8(self):
        # 0.30*8 + 0.30*8 + 0.25*10 + 0.15*10 = 8.8
        total, subs = score_d3(D3Inputs(uses_now=True, negative_shift_count=1))
        assert subs["S_det"] == 8.0
        assert subs["S_leak"] == 8.0
        assert total == pytest.approx(8.8, abs=1e-12)

    def test_rolling_penalty_per_site(self):
        total, subs = score_d3(D3Inputs(rolling_no_minp_count=3))
        assert subs["S_leak"] == 7.0
        assert total == pytest.approx(0.3 * 10 + 0.3 * 7 + 0.25 * 10 + 0.15 * 10)

    def test_completeness_penalty_applies_to_s_log(self):
        total, subs = score_d3(D3Inputs(completeness_penalty=-0.10))
        assert subs["S_log"] == pytest.approx(9.9)
        assert total == pytest.approx(10.0 - 0.25 * 0.10)

    def test_sub_scores_floored_at_zero(self):
        total, subs = score_d3(D3Inputs(negative_shift_count=10))
        assert subs["S_leak"] == 0.0
        assert total == pytest.approx(0.3 * 10 + 0 + 0.25 * 10 + 0.15 * 10)

    def test_monotone_in_penalty_count(self):
        previous = 11.0
        for shifts in range(6):
            total, _ = score_d3(D3Inputs(negative_shift_count=shifts))
            assert total < previous
            previous = total

    def test_weights_sum_to_one(self):
        from driftgate.scoring import D3_WEIGHTS, D4_WEIGHTS

        assert sum(D3_WEIGHTS.values()) == pytest.approx(1.0)
        assert sum(D4_WEIGHTS.values()) == pytest.approx(1.0)


class TestScoreD4:
    def test_bollinger_fixture_is_ten(self, bollinger_card):
        inputs = d4_inputs_from_card(bollinger_card)
        assert inputs.strategy_keywords >= 2
        assert inputs.uses_mature_indicators
        total, subs = score_d4(inputs)
        assert subs == {"S_logic": 10.0, "S_overfit": 10.0, "S_gen": 10.0}
        assert total == 10.0

    def test_25_parameters_is_9_55(self):
        # S_overfit 8.5: 0.40*10 + 0.30*8.5 + 0.30*10 = 9.55
        inputs = D4Inputs(
            strategy_keywords=4, parameter_count=25,
            uses_mature_indicators=True, handles_edge_cases=True,
        )
        total, subs = score_d4(inputs)
        assert subs["S_overfit"] == 8.5
        assert total == pytest.approx(9.55, abs=1e-12)

    def test_degenerate_constant_rule_is_8_8(self):
        # 0 keywords: S_logic 7: 0.40*7 + 0.30*10 + 0.30*10 = 8.8
        inputs = D4Inputs(
            strategy_keywords=0, uses_mature_indicators=True, handles_edge_cases=True
        )
        total, subs = score_d4(inputs)
        assert subs["S_logic"] == 7.0
        assert total == pytest.approx(8.8, abs=1e-12)

    def test_bonuses_capped_at_ten(self):
        inputs = D4Inputs(
            strategy_keywords=5, uses_mature_indicators=True, handles_edge_cases=True
        )
        _total, subs = score_d4(inputs)
        assert subs["S_gen"] == 10.0

    def test_conditional_overload_penalized(self):
        total, subs = score_d4(D4Inputs(strategy_keywords=3, conditional_nodes=31))
        assert subs["S_overfit"] == 8.0

    def test_constant_rule_detection(self):
        assert is_constant_rule("1 > 0")
        assert not is_constant_rule("close > 0")
        assert not is_constant_rule("sma(close, 5) > 100")

    def test_unaudited_indicator_detection(self, bollinger_card, bollinger_dict):
        assert not unaudited_indicator_usage(bollinger_card)
        import copy

        from driftgate.cards import StrategyCard

        raw = copy.deepcopy(bollinger_dict)
        raw["audit_requirements"]["indicators"] = {}
        raw["audit_requirements"]["audit_log_columns"] = [
            "datetime", "close", "signal", "position_state", "equity",
            "constraint_check", "event_type", "message",
        ]
        assert unaudited_indicator_usage(StrategyCard.from_dict(raw))


class TestReviews:
    @pytest.fixture
    def matrix(self):
        scores = {
            ("alpha", "alpha"): {"D1": 10.0},
            ("beta", "alpha"): {"D1": 8.0},
            ("gamma", "alpha"): {"D1": 8.0},
            ("delta", "alpha"): {"D1": 8.0},
            ("alpha", "beta"): {"D1": 7.0},
            ("beta", "beta"): {"D1": 9.0},
            ("gamma", "beta"): {"D1": 6.0},
            ("delta", "beta"): {"D1": 8.0},
        }
        vendors = {"alpha": "acme", "beta": "acme", "gamma": "zen", "delta": "zen"}
        return ReviewMatrix(scores=scores, vendor_of=vendors)

    def test_self_excluded(self, matrix):
        assert aggregate_reviews(matrix, "alpha", "D1") == 8.0

    def test_single_peer(self):
        matrix = ReviewMatrix(scores={("r1", "model"): {"D1": 7.0}})
        assert aggregate_reviews(matrix, "model", "D1") == 7.0

    def test_no_peer_reviews_error(self):
        matrix = ReviewMatrix(scores={("model", "model"): {"D1": 9.0}})
        with pytest.raises(NoPeerReviewsError, match="NO_PEER_REVIEWS"):
            aggregate_reviews(matrix, "model", "D1")

    def test_self_bias(self, matrix):
        assert self_bias(matrix, "alpha", "D1") == pytest.approx(10.0 - 8.0)

    def test_self_bias_zero_when_equal(self):
        matrix = ReviewMatrix(
            scores={("m", "m"): {"D1": 8.5}, ("r", "m"): {"D1": 8.5}}
        )
        assert self_bias(matrix, "m", "D1") == 0.0

    def test_self_bias_two_peers(self):
        matrix = ReviewMatrix(
            scores={
                ("m", "m"): {"D1": 9.0},
                ("a", "m"): {"D1": 6.0},
                ("b", "m"): {"D1": 8.0},
            }
        )
        assert self_bias(matrix, "m", "D1") == pytest.approx(2.0)

    def test_vendor_bias_zero_when_scores_equal(self):
        scores = {
            ("a1", "a2"): {"D1": 8.0},
            ("b1", "a2"): {"D1": 8.0},
        }
        matrix = ReviewMatrix(scores=scores, vendor_of={"a1": "A", "a2": "A", "b1": "B"})
        assert vendor_bias(matrix, "A", "D1") == 0.0

    def test_vendor_bias_one_unit(self, matrix):
        # acme->acme scores: alpha->alpha 10, beta->alpha 8, alpha->beta 7, beta->beta 9 => mean 8.5
        # others->acme: gamma/delta on alpha 8,8 and on beta 6,8 => mean 7.5
        assert vendor_bias(matrix, "acme", "D1") == pytest.approx(1.0)

    def test_crafted_2x2_matrix(self):
        scores = {
            ("a1", "a1"): {"D1": 9.0},
            ("a2", "a1"): {"D1": 8.0},
            ("b1", "a1"): {"D1": 6.0},
            ("b2", "a1"): {"D1": 7.0},
        }
        matrix = ReviewMatrix(
            scores=scores, vendor_of={"a1": "A", "a2": "A", "b1": "B", "b2": "B"}
        )
        assert vendor_bias(matrix, "A", "D1") == pytest.approx(8.5 - 6.5)

    def test_scores_outside_scale_rejected(self):
        with pytest.raises(ValueError):
            ReviewMatrix(scores={("r", "m"): {"D1": 11.0}})

    def test_permutation_invariance(self, matrix):
        shuffled = ReviewMatrix(
            scores=dict(reversed(list(matrix.scores.items()))),
            vendor_of=matrix.vendor_of,
        )
        assert aggregate_reviews(shuffled, "beta", "D1") == aggregate_reviews(
            matrix, "beta", "D1"
        )


def oracle_kendall(a, b):
    concordant = discordant = 0
    n = len(a)
    for i in range(n):
        for j in range(i + 1, n):
            s = (a[i] - a[j]) * (b[i] - b[j])
            if s > 0:
                concordant += 1
            elif s < 0:
                discordant += 1
    return (concordant - discordant) / (n * (n - 1) / 2)


def oracle_spearman(x, y):
    def ranks(v):
        order = sorted(range(len(v)), key=lambda i: v[i])
        out = [0.0] * len(v)
        for rank, idx in enumerate(order, start=1):
            out[idx] = float(rank)
        return out

    rx, ry = ranks(x), ranks(y)
    mx = sum(rx) / len(rx)
    my = sum(ry) / len(ry)
    num = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    den = math.sqrt(sum((a - mx) ** 2 for a in rx) * sum((b - my) ** 2 for b in ry))
    return num / den


class TestRankStatistics:
    def test_identical_rankings(self):
        assert kendall_tau([1, 2, 3, 4], [1, 2, 3, 4]) == pytest.approx(1.0)
        assert spearman_rho([1, 2, 3, 4], [1, 2, 3, 4]) == pytest.approx(1.0)

    def test_reversed_rankings(self):
        assert kendall_tau([1, 2, 3, 4], [4, 3, 2, 1]) == pytest.approx(-1.0)
        assert spearman_rho([1, 2, 3, 4], [4, 3, 2, 1]) == pytest.approx(-1.0)

    def test_adjacent_swap_among_four(self):
        # one discordant pair of six: 1 - 2*(1/6)
        assert kendall_tau([1, 2, 3, 4], [2, 1, 3, 4]) == pytest.approx(1 - 2 / 6)

    @pytest.mark.parametrize("n", [2, 3, 4, 5, 6])
    def test_all_permutations_match_oracles(self, n):
        base = list(range(1, n + 1))
        for perm in itertools.permutations(base):
            assert kendall_tau(base, perm) == pytest.approx(oracle_kendall(base, perm))
            assert spearman_rho(base, perm) == pytest.approx(oracle_spearman(base, perm))

    def test_monotone_transform_invariance(self):
        x = [3.0, 1.0, 4.0, 1.5, 9.0, 2.6]
        y = [2.0, 7.0, 1.0, 8.0, 2.8, 1.8]
        assert kendall_tau(x, y) == pytest.approx(kendall_tau([v**3 for v in x], y))
        assert spearman_rho(x, y) == pytest.approx(
            spearman_rho([math.exp(v) for v in x], y)
        )

    def test_twelve_point_fixture(self):
        rng = np.random.Generator(np.random.PCG64(5))
        x = rng.normal(size=12)
        y = 0.5 * x + rng.normal(size=12)
        assert spearman_rho(x, y) == pytest.approx(oracle_spearman(list(x), list(y)))

    def test_bootstrap_deterministic(self):
        rng = np.random.Generator(np.random.PCG64(17))
        x = rng.normal(size=30)
        y = x + rng.normal(scale=0.5, size=30)
        a = bootstrap_ci(x, y, b=1000, seed=42)
        b = bootstrap_ci(x, y, b=1000, seed=42)
        c = bootstrap_ci(x, y, b=1000, seed=43)
        assert a == b
        assert a != c
        assert a[0] <= spearman_rho(x, y) <= a[1]


class TestComplexity:
    def test_calendar_spread_is_2_9(self):
        meta = StrategyMeta(multi_asset=True, intraday=False, n_constraints=4, n_params=6)
        assert round(complexity_score(meta), 1) == 2.9

    def test_single_asset_one_param(self):
        meta = StrategyMeta(multi_asset=False, intraday=False, n_constraints=3, n_params=1)
        assert complexity_score(meta) == pytest.approx(0.5 * math.log2(2))

    def test_zero_params_degenerate(self):
        meta = StrategyMeta(n_constraints=0, n_params=0)
        assert complexity_score(meta) == 0.0

    def test_non_decreasing_in_params(self):
        values = [
            complexity_score(StrategyMeta(n_params=n)) for n in range(0, 30)
        ]
        assert values == sorted(values)

    def test_from_card(self, bollinger_card):
        meta = StrategyMeta.from_card(bollinger_card)
        assert meta.n_params == 3
        assert not meta.multi_asset


class TestOosMetrics:
    def test_constant_equity(self):
        metrics = oos_metrics(np.full(10, 100_000.0), [])
        assert metrics["sharpe"] == 0.0
        assert "ZERO_VOL" in metrics["flags"]
        assert metrics["max_drawdown"] == 0.0
        assert metrics["turnover"] == 0.0

    def test_strictly_increasing_equity_has_zero_mdd(self):
        equity = np.linspace(100_000, 120_000, 50)
        metrics = oos_metrics(equity, [])
        assert metrics["max_drawdown"] == 0.0
        assert metrics["sharpe"] > 0

    def test_crafted_10_bar_curve_matches_oracle(self):
        equity = np.array(
            [100.0, 102.0, 101.0, 105.0, 103.0, 108.0, 107.0, 110.0, 106.0, 111.0]
        )
        metrics = oos_metrics(equity, [], frequency="daily")
        returns = [equity[i] / equity[i - 1] - 1 for i in range(1, 10)]
        mean = sum(returns) / len(returns)
        var = sum((r - mean) ** 2 for r in returns) / (len(returns) - 1)
        expected_sharpe = mean / math.sqrt(var) * math.sqrt(252)
        assert metrics["sharpe"] == pytest.approx(expected_sharpe, rel=1e-12)
        peak, worst = equity[0], 0.0
        for v in equity:
            peak = max(peak, v)
            worst = max(worst, 1 - v / peak)
        assert metrics["max_drawdown"] == pytest.approx(worst, rel=1e-12)

    def test_turnover_oracle(self, bollinger_card, scenario_series):
        result = run_backtest(bollinger_card, scenario_series["clean_golden_cross"])
        metrics = oos_metrics(result.equity, result.trade_log)
        trade = result.trade_log[0]
        expected = trade.quantity * (trade.entry_price + trade.exit_price) / np.mean(result.equity)
        assert metrics["turnover"] == pytest.approx(expected, rel=1e-12)
        assert metrics["turnover"] >= 0
        assert 0 <= metrics["max_drawdown"] <= 1

    def test_minute_annualization_recorded(self):
        metrics = oos_metrics(np.linspace(1, 2, 30), [], frequency="minute")
        assert metrics["annualization_factor"] == 525_600.0

    def test_sharpe_sign_matches_mean_return(self):
        falling = oos_metrics(np.linspace(120_000, 100_000, 40), [])
        assert falling["sharpe"] < 0


class TestRobustness:
    def test_single_trial_reduces_to_probabilistic_sharpe(self):
        rng = np.random.Generator(np.random.PCG64(3))
        returns = rng.normal(0.001, 0.01, 250)
        out = deflated_sharpe(returns, n_trials=1)
        assert out["expected_max_sharpe"] == 0.0
        from scipy import stats as sstats

        sr = np.mean(returns) / np.std(returns, ddof=1)
        skew = sstats.skew(returns)
        kurt = sstats.kurtosis(returns, fisher=False)
        stat = sr * math.sqrt(249) / math.sqrt(1 - skew * sr + (kurt - 1) / 4 * sr**2)
        assert out["dsr"] == pytest.approx(float(sstats.norm.cdf(stat)), rel=1e-12)

    def test_deflation_lowers_dsr(self):
        rng = np.random.Generator(np.random.PCG64(3))
        returns = rng.normal(0.001, 0.01, 250)
        single = deflated_sharpe(returns, n_trials=1)
        many = deflated_sharpe(
            returns, trial_sharpes=[0.02, 0.05, 0.08, 0.01, 0.03, 0.06]
        )
        assert many["dsr"] < single["dsr"]

    def test_insufficient_samples_flagged(self):
        out = deflated_sharpe([0.01], n_trials=1)
        assert out["dsr"] is None
        assert "INSUFFICIENT_SAMPLES" in out["flags"]

    def test_pbo_identical_strategies_is_half(self):
        rng = np.random.Generator(np.random.PCG64(9))
        row = rng.normal(0, 0.01, 64)
        matrix = np.vstack([row, row, row])
        out = pbo_cscv(matrix, n_partitions=8)
        assert out["pbo"] == 0.5
        assert out["n_combinations"] == math.comb(8, 4)

    def test_pbo_matches_exhaustive_toy(self):
        # 3 strategies, 16 periods, 4 partitions: verified by brute force below
        rng = np.random.Generator(np.random.PCG64(21))
        matrix = rng.normal(0, 0.01, (3, 16))
        matrix[0, :8] += 0.02  # in-sample star that fades out of sample
        matrix[0, 8:] -= 0.02
        out = pbo_cscv(matrix, n_partitions=4)

        from itertools import combinations

        from scipy import stats as sstats

        def sharpe(r):
            sd = np.std(r, ddof=1)
            return 0.0 if sd == 0 else np.mean(r) / sd

        blocks = np.array_split(np.arange(16), 4)
        below = 0.0
        count = 0
        for insample in combinations(range(4), 2):
            mask = np.zeros(16, dtype=bool)
            for b in insample:
                mask[blocks[b]] = True
            is_s = [sharpe(matrix[s, mask]) for s in range(3)]
            oos_s = [sharpe(matrix[s, ~mask]) for s in range(3)]
            winner = int(np.argmax(is_s))
            omega = sstats.rankdata(oos_s)[winner] / 4.0
            below += 1.0 if omega < 0.5 else (0.5 if omega == 0.5 else 0.0)
            count += 1
        assert out["pbo"] == pytest.approx(below / count)

    def test_pbo_insufficient_samples(self):
        out = pbo_cscv(np.zeros((3, 10)), n_partitions=8)
        assert out["pbo"] is None
        assert "INSUFFICIENT_SAMPLES" in out["flags"]


class TestTokenCost:
    def test_zero(self):
        assert token_cost(0, 0, 3.0, 15.0) == 0.0

    def test_one_million_input_tokens(self):
        assert token_cost(1_000_000, 0, 3.0, 15.0) == pytest.approx(3.0)

    def test_mixed(self):
        assert token_cost(250_000, 100_000, 2.0, 10.0) == pytest.approx(1.5)


class TestScorecard:
    def test_normalization_and_shape(self):
        card = make_scorecard(9.5, 8.5, 10.0, 0.0, flags=("X",))
        doc = card.to_json_dict()
        assert set(doc) == {"D1", "D2", "D3", "D4", "flags", "raw"}
        assert doc["D1"] == 0.95
        assert doc["D2"] == 0.85
        assert doc["D3"] == 1.0
        assert doc["D4"] == 0.0
        assert doc["flags"] == ["X"]

    def test_clamped(self):
        card = make_scorecard(12.0, -1.0, 5.0, 5.0)
        assert card.d1 == 1.0
        assert card.d2 == 0.0

    def test_meets_targets(self):
        assert make_scorecard(9.0, 8.8, 9.5, 0.0).meets_targets()
        assert not make_scorecard(9.0, 8.0, 9.5, 10.0).meets_targets()

    def test_d2_from_audit(self, bollinger_card, scenario_series):
        result = run_backtest(bollinger_card, scenario_series["clean_golden_cross"])
        assert score_d2_from_audit(result.audit_log) == 10.0

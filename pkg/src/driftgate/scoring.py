"""Automated D3/D4 scoring, review aggregation, OOS metrics, cost sweep
analytics, and meta-statistics (complexity, bias, rank correlations,
overfitting diagnostics).

Raw scores live on the 0-10 scale; scorecards serialize normalized values in
[0, 1]. Penalty triggers are defined over the card's rule ASTs; the mapping
from code-level checks to DSL checks is documented in docs/scoring.md.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats as sstats

from .dsl import LintCode, StaticLintReport, parse_rule, walk
from .dsl.nodes import BoolOp, Compare, FuncCall, Literal, PriceRef
from .errors import DriftgateError

EULER_GAMMA = 0.5772156649015329

D3_WEIGHTS = {"S_det": 0.30, "S_leak": 0.30, "S_log": 0.25, "S_qual": 0.15}
D4_WEIGHTS = {"S_logic": 0.40, "S_overfit": 0.30, "S_gen": 0.30}

INDICATOR_FUNCTIONS = (
    "sma", "std", "rsi", "macd", "atr", "donchian_high", "donchian_low", "rolling",
)
CROSSING_FUNCTIONS = ("cross_above", "cross_below")


def _clamp(x: float, lo: float = 0.0, hi: float = 10.0) -> float:
    return max(lo, min(hi, x))


@dataclass(frozen=True)
class Scorecard:
    d1: float = 1.0
    d2: float = 1.0
    d3: float = 1.0
    d4: float = 1.0
    raw: dict = field(default_factory=dict)
    flags: tuple = ()

    def to_json_dict(self) -> dict:
        return {
            "D1": round(self.d1, 6),
            "D2": round(self.d2, 6),
            "D3": round(self.d3, 6),
            "D4": round(self.d4, 6),
            "flags": list(self.flags),
            "raw": self.raw,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2)

    def with_d1_zeroed(self, flags: tuple) -> "Scorecard":
        raw = dict(self.raw)
        raw["D1"] = 0.0
        return replace(self, d1=0.0, raw=raw, flags=tuple(flags))

    def meets_targets(self, threshold: float = 0.85) -> bool:
        return self.d1 >= threshold and self.d2 >= threshold and self.d3 >= threshold


def normalize(raw_score: float) -> float:
    return _clamp(raw_score / 10.0, 0.0, 1.0)


def make_scorecard(d1_raw: float, d2_raw: float, d3_raw: float, d4_raw: float,
                   detail: dict | None = None, flags: tuple = ()) -> Scorecard:
    raw = {"D1": d1_raw, "D2": d2_raw, "D3": d3_raw, "D4": d4_raw}
    raw.update(detail or {})
    return Scorecard(
        d1=normalize(d1_raw),
        d2=normalize(d2_raw),
        d3=normalize(d3_raw),
        d4=normalize(d4_raw),
        raw=raw,
        flags=tuple(flags),
    )


@dataclass(frozen=True)
class D3Inputs:
    uses_random: bool = False
    unseeded_random: bool = False
    uses_now: bool = False
    negative_shift_count: int = 0
    forward_index_count: int = 0
    rolling_no_minp_count: int = 0
    trade_log_missing: bool = False
    audit_log_missing: bool = False
    missing_required_fields: int = 0
    constant_rule: bool = False
    unaudited_indicators: bool = False
    completeness_penalty: float = 0.0  # <= 0, from the audit gate

    @classmethod
    def from_lint(cls, lint: StaticLintReport, **overrides) -> "D3Inputs":
        return cls(
            uses_random=lint.count(LintCode.NONDET_RANDOM) > 0,
            uses_now=lint.count(LintCode.NONDET_NOW) > 0,
            negative_shift_count=lint.count(LintCode.LEAK_NEG_SHIFT),
            forward_index_count=lint.count(LintCode.LEAK_FORWARD_INDEX),
            rolling_no_minp_count=lint.count(LintCode.ROLLING_NO_MINP),
            **overrides,
        )


def score_d3(inputs: D3Inputs) -> tuple:
    """Weighted reliability score; each sub-score starts at 10.0."""
    s_det = 10.0
    if inputs.uses_random:
        s_det -= 3.0
    if inputs.unseeded_random:
        s_det -= 2.0
    if inputs.uses_now:
        s_det -= 2.0

    s_leak = 10.0
    s_leak -= 2.0 * inputs.negative_shift_count
    s_leak -= 2.0 * inputs.forward_index_count
    s_leak -= 1.0 * inputs.rolling_no_minp_count

    s_log = 10.0
    if inputs.trade_log_missing:
        s_log -= 3.0
    if inputs.audit_log_missing:
        s_log -= 2.0
    s_log -= 0.5 * inputs.missing_required_fields
    s_log += inputs.completeness_penalty

    s_qual = 10.0
    if inputs.constant_rule:
        s_qual -= 2.0
    if inputs.unaudited_indicators:
        s_qual -= 1.0

    subs = {
        "S_det": _clamp(s_det),
        "S_leak": _clamp(s_leak),
        "S_log": _clamp(s_log),
        "S_qual": _clamp(s_qual),
    }
    total = sum(D3_WEIGHTS[k] * subs[k] for k in D3_WEIGHTS)
    return total, subs


@dataclass(frozen=True)
class D4Inputs:
    strategy_keywords: int = 0
    numeric_literals: int = 0
    conditional_nodes: int = 0
    parameter_count: int = 0
    ast_nodes: int = 0
    uses_mature_indicators: bool = False
    handles_edge_cases: bool = False


def d4_inputs_from_card(card) -> D4Inputs:
    """Measure the D4 triggers on the card's rule ASTs."""
    keywords: set = set()
    literals = 0
    conditionals = 0
    nodes = 0
    mature = False
    rolling_without_minp = False
    for text in (card.entry_rule, card.exit_rule):
        if not text:
            continue
        tree = parse_rule(text)
        for node in walk(tree):
            nodes += 1
            if isinstance(node, PriceRef):
                keywords.add(node.field_name)
            elif isinstance(node, FuncCall):
                if node.name in INDICATOR_FUNCTIONS:
                    keywords.add(node.name)
                    mature = True
                    if node.name == "rolling" and node.kwarg("min_periods") is None:
                        rolling_without_minp = True
                elif node.name in CROSSING_FUNCTIONS:
                    keywords.add(node.name)
            elif isinstance(node, Literal):
                literals += 1
            if isinstance(node, (Compare, BoolOp)):
                conditionals += 1
    return D4Inputs(
        strategy_keywords=len(keywords),
        numeric_literals=literals,
        conditional_nodes=conditionals,
        parameter_count=len(card.parameters),
        ast_nodes=nodes,
        uses_mature_indicators=mature,
        handles_edge_cases=not rolling_without_minp,
    )


def score_d4(inputs: D4Inputs) -> tuple:
    s_logic = 10.0
    if inputs.strategy_keywords < 2:
        s_logic -= 3.0
    if inputs.numeric_literals > 50:
        s_logic -= 1.0

    s_overfit = 10.0
    if inputs.conditional_nodes > 30:
        s_overfit -= 2.0
    if inputs.parameter_count > 20:
        s_overfit -= 1.5

    s_gen = 10.0
    if inputs.ast_nodes > 50:
        s_gen -= 2.0
    if inputs.uses_mature_indicators:
        s_gen += 1.0
    if inputs.handles_edge_cases:
        s_gen += 0.5

    subs = {
        "S_logic": _clamp(s_logic),
        "S_overfit": _clamp(s_overfit),
        "S_gen": _clamp(s_gen),
    }
    total = sum(D4_WEIGHTS[k] * subs[k] for k in D4_WEIGHTS)
    return total, subs


def score_d4_oos(executed: bool) -> float:
    """OOS execution leg of D4: runs or it does not."""
    return 10.0 if executed else 0.0


def combine_d4(d4_static: float, d4_oos: float | None) -> float:
    """Headline D4: simple mean of the static and OOS legs when both exist."""
    if d4_oos is None:
        return d4_static
    return (d4_static + d4_oos) / 2.0


def is_constant_rule(text: str | None) -> bool:
    """A rule that references no market data is degenerate."""
    if not text:
        return True
    tree = parse_rule(text)
    for node in walk(tree):
        if isinstance(node, PriceRef):
            return False
        if isinstance(node, FuncCall) and node.name in INDICATOR_FUNCTIONS + CROSSING_FUNCTIONS:
            return False
    return True


def unaudited_indicator_usage(card) -> bool:
    """True when rules use indicator functions but the audit requirements
    define no indicator columns covering them."""
    used = set()
    for text in (card.entry_rule, card.exit_rule):
        if not text:
            continue
        for node in walk(parse_rule(text)):
            if isinstance(node, FuncCall) and node.name in INDICATOR_FUNCTIONS:
                used.add(node.name)
    if not used:
        return False
    if card.audit_requirements is None:
        return True
    audited = set()
    for _name, rule_text in card.audit_requirements.indicators:
        for node in walk(parse_rule(rule_text)):
            if isinstance(node, FuncCall):
                audited.add(node.name)
    return not used.issubset(audited)


@dataclass(frozen=True)
class ReviewMatrix:
    """Cross-evaluation scores on 1-10 scales.

    scores[(reviewer, submission)][dimension] = score; reviewer == submission
    marks a self-review. vendor_of maps a model to its vendor.
    """

    scores: dict
    vendor_of: dict = field(default_factory=dict)

    def __post_init__(self):
        for key, dims in self.scores.items():
            for dim, value in dims.items():
                if not 1.0 <= value <= 10.0:
                    raise ValueError(
                        f"review score out of [1,10]: {key} {dim}={value}"
                    )

    @classmethod
    def from_json_dict(cls, raw: dict) -> "ReviewMatrix":
        scores = {}
        for entry in raw.get("reviews", []):
            key = (entry["reviewer"], entry["submission"])
            scores.setdefault(key, {}).update(
                {k: float(v) for k, v in entry["scores"].items()}
            )
        return cls(scores=scores, vendor_of=dict(raw.get("vendors", {})))

    def reviewers_of(self, submission: str) -> list:
        return [r for (r, s) in self.scores if s == submission]


class NoPeerReviewsError(DriftgateError):
    def __init__(self, submission: str, dimension: str):
        super().__init__(f"NO_PEER_REVIEWS: {submission} has no peer reviews for {dimension}")


def aggregate_reviews(m: ReviewMatrix, submission: str, dimension: str) -> float:
    """Arithmetic mean over reviewers, self-reviews excluded."""
    values = [
        dims[dimension]
        for (reviewer, sub), dims in m.scores.items()
        if sub == submission and reviewer != submission and dimension in dims
    ]
    if not values:
        raise NoPeerReviewsError(submission, dimension)
    return float(sum(values) / len(values))


def self_bias(m: ReviewMatrix, model: str, dimension: str = "D1") -> float:
    """Self score minus the mean of the others' scores of the same model."""
    self_score = m.scores.get((model, model), {}).get(dimension)
    if self_score is None:
        raise DriftgateError(f"no self-review for {model} on {dimension}")
    return float(self_score - aggregate_reviews(m, model, dimension))


def vendor_bias(m: ReviewMatrix, vendor: str, dimension: str = "D1") -> float:
    """Mean same-vendor score of the vendor's submissions minus the mean
    score those submissions receive from other vendors."""
    same, cross = [], []
    for (reviewer, sub), dims in m.scores.items():
        if dimension not in dims or m.vendor_of.get(sub) != vendor:
            continue
        if m.vendor_of.get(reviewer) == vendor:
            same.append(dims[dimension])
        else:
            cross.append(dims[dimension])
    if not same or not cross:
        raise DriftgateError(f"insufficient reviews to compute vendor bias for {vendor}")
    return float(np.mean(same) - np.mean(cross))


def kendall_tau(a, b) -> float:
    """Rank agreement in [-1, 1]; tie-adjusted (equals plain pair counting
    on tie-free rankings)."""
    if len(a) != len(b):
        raise ValueError("rankings must have equal length")
    if len(a) < 2:
        raise ValueError("need at least two items")
    return float(sstats.kendalltau(a, b).statistic)


def spearman_rho(x, y) -> float:
    """Rank correlation with average ranks on ties."""
    if len(x) != len(y):
        raise ValueError("inputs must have equal length")
    if len(x) < 2:
        raise ValueError("need at least two points")
    return float(sstats.spearmanr(x, y).statistic)


def bootstrap_ci(x, y, b: int = 1000, seed: int = 42, statistic=spearman_rho) -> tuple:
    """Empirical 2.5/97.5 percentile interval of the statistic over B
    pair-resamples; deterministic given the seed."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    rng = np.random.Generator(np.random.PCG64(seed))
    n = len(x)
    values = []
    for _ in range(b):
        idx = rng.integers(0, n, n)
        try:
            v = statistic(x[idx], y[idx])
        except ValueError:
            continue
        if not math.isnan(v):
            values.append(v)
    if not values:
        raise DriftgateError("bootstrap produced no valid resamples")
    lo, hi = np.percentile(values, [2.5, 97.5])
    return float(lo), float(hi)


@dataclass(frozen=True)
class StrategyMeta:
    multi_asset: bool = False
    intraday: bool = False
    n_constraints: int = 3
    n_params: int = 0

    @classmethod
    def from_card(cls, card) -> "StrategyMeta":
        n_constraints = 0
        if card.constraints is not None:
            n_constraints = 3  # max_leverage, allowed_assets, execution_timing
        return cls(
            multi_asset=card.meta.multi_asset,
            intraday=card.meta.intraday,
            n_constraints=n_constraints,
            n_params=len(card.parameters),
        )


def complexity_score(meta: StrategyMeta) -> float:
    """Specification complexity from structural features of the card."""
    return (
        1.0 * (1 if meta.multi_asset else 0)
        + 0.5 * (1 if meta.intraday else 0)
        + 0.5 * (1 if meta.n_constraints > 3 else 0)
        + 0.5 * math.log2(meta.n_params + 1)
    )


ANNUALIZATION = {"daily": 252.0, "minute": 525_600.0}

ZERO_VOL_FLAG = "ZERO_VOL"


def oos_metrics(equity: np.ndarray, trades, cost_bps: float = 0.0,
                frequency: str = "daily") -> dict:
    """Sharpe, maximum drawdown, and turnover over one equity curve.

    Sharpe uses per-bar simple returns annualized by bar frequency; zero
    volatility reports 0 with a ZERO_VOL flag. Turnover is traded notional
    over average equity across the run window (window length recorded).
    """
    equity = np.asarray(equity, dtype=np.float64)
    flags = []
    factor = ANNUALIZATION.get(frequency, 252.0)
    if len(equity) < 2:
        sharpe = 0.0
        flags.append(ZERO_VOL_FLAG)
        mdd = 0.0
    else:
        returns = equity[1:] / equity[:-1] - 1.0
        vol = float(np.std(returns, ddof=1)) if len(returns) > 1 else 0.0
        if vol == 0.0:
            sharpe = 0.0
            flags.append(ZERO_VOL_FLAG)
        else:
            sharpe = float(np.mean(returns)) / vol * math.sqrt(factor)
        peak = np.maximum.accumulate(equity)
        mdd = float(np.max(1.0 - equity / peak))
    notional = float(
        sum(t.quantity * (t.entry_price + t.exit_price) for t in trades)
    )
    turnover = notional / float(np.mean(equity)) if len(equity) else 0.0
    return {
        "sharpe": sharpe,
        "max_drawdown": mdd,
        "turnover": turnover,
        "total_return": float(equity[-1] / equity[0] - 1.0) if len(equity) else 0.0,
        "final_equity": float(equity[-1]) if len(equity) else 0.0,
        "n_trades": len(trades),
        "net_pnl": float(sum(t.pnl for t in trades)),
        "cost_bps": cost_bps,
        "annualization_factor": factor,
        "turnover_window_bars": int(len(equity)),
        "flags": flags,
    }


def _sharpe(returns: np.ndarray) -> float:
    if len(returns) < 2:
        return 0.0
    vol = float(np.std(returns, ddof=1))
    if vol == 0.0:
        return 0.0
    return float(np.mean(returns)) / vol


def deflated_sharpe(returns, n_trials: int = 1, trial_sharpes=None) -> dict:
    """Probability the observed Sharpe exceeds the expected maximum of
    n_trials tries, adjusted for return skewness and kurtosis.

    With a single trial the benchmark is zero and the value reduces to the
    probabilistic Sharpe of that trial.
    """
    returns = np.asarray(returns, dtype=np.float64)
    flags = []
    t = len(returns)
    if t < 2:
        return {"dsr": None, "flags": ["INSUFFICIENT_SAMPLES"]}
    sr = _sharpe(returns)
    skew = float(sstats.skew(returns))
    kurt = float(sstats.kurtosis(returns, fisher=False))
    if trial_sharpes is not None and len(trial_sharpes) > 1:
        n_trials = len(trial_sharpes)
        spread = float(np.std(np.asarray(trial_sharpes, dtype=np.float64), ddof=1))
    else:
        spread = 0.0
    if n_trials <= 1 or spread == 0.0:
        sr0 = 0.0
        if n_trials > 1:
            flags.append("NO_TRIAL_SPREAD")
    else:
        z = sstats.norm.ppf
        sr0 = spread * (
            (1.0 - EULER_GAMMA) * z(1.0 - 1.0 / n_trials)
            + EULER_GAMMA * z(1.0 - 1.0 / (n_trials * math.e))
        )
    denom = 1.0 - skew * sr + (kurt - 1.0) / 4.0 * sr * sr
    if denom <= 0:
        return {"dsr": None, "flags": flags + ["DEGENERATE_MOMENTS"]}
    stat = (sr - sr0) * math.sqrt(t - 1) / math.sqrt(denom)
    return {
        "dsr": float(sstats.norm.cdf(stat)),
        "sharpe": sr,
        "expected_max_sharpe": sr0,
        "n_trials": n_trials,
        "flags": flags,
    }


def pbo_cscv(returns_matrix, n_partitions: int = 8) -> dict:
    """Probability of backtest overfitting via combinatorially symmetric
    cross-validation over contiguous partitions.

    For each half/half block combination the in-sample winner's OOS rank
    (average ranks on ties) is scored; ranks below the median count 1, exact
    medians 0.5. Degenerate identical strategies therefore report 0.5.
    """
    from itertools import combinations

    matrix = np.asarray(returns_matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise ValueError("returns_matrix must be strategies x periods")
    n_strategies, t = matrix.shape
    if t < 2 * n_partitions:
        return {"pbo": None, "flags": ["INSUFFICIENT_SAMPLES"]}
    if n_strategies < 2:
        return {"pbo": None, "flags": ["INSUFFICIENT_STRATEGIES"]}
    blocks = np.array_split(np.arange(t), n_partitions)
    half = n_partitions // 2
    below = 0.0
    count = 0
    for insample in combinations(range(n_partitions), half):
        mask = np.zeros(t, dtype=bool)
        for b in insample:
            mask[blocks[b]] = True
        is_sharpes = np.array([_sharpe(matrix[s, mask]) for s in range(n_strategies)])
        oos_sharpes = np.array([_sharpe(matrix[s, ~mask]) for s in range(n_strategies)])
        winner = int(np.argmax(is_sharpes))
        ranks = sstats.rankdata(oos_sharpes)  # ascending, average ties
        omega = ranks[winner] / (n_strategies + 1.0)
        if omega < 0.5:
            below += 1.0
        elif omega == 0.5:
            below += 0.5
        count += 1
    return {"pbo": below / count, "n_combinations": count, "flags": []}


def robustness_diagnostics(returns, n_trials: int = 1, trial_sharpes=None,
                           returns_matrix=None, n_partitions: int = 8) -> dict:
    """DSR and PBO as diagnostics; never gates."""
    out = {"dsr": deflated_sharpe(returns, n_trials, trial_sharpes)}
    if returns_matrix is not None:
        out["pbo"] = pbo_cscv(returns_matrix, n_partitions)
    else:
        out["pbo"] = {"pbo": None, "flags": ["NO_STRATEGY_MATRIX"]}
    return out


def token_cost(input_tokens: float, output_tokens: float,
               price_in_per_million: float, price_out_per_million: float) -> float:
    """Dollar cost of a model call from token counts and per-1M prices."""
    return (
        input_tokens * price_in_per_million / 1e6
        + output_tokens * price_out_per_million / 1e6
    )


def score_d2_from_audit(audit) -> float:
    """Automated D2 fallback: fraction of bars whose constraint check passed,
    on the 0-10 scale. Peer reviews override this when provided."""
    if audit is None or not audit.has_column("constraint_check"):
        return 0.0
    col = audit.column("constraint_check")
    if len(col) == 0:
        return 10.0
    passes = sum(1 for cell in col if str(cell) == "PASS")
    return 10.0 * passes / len(col)

"""Strategy cards: schema validation, canonicalization, semantic hashing,
equivalence checking, and the drift penalty.

A card freezes a strategy's semantics. Rules are DSL text, parameters are
typed values, and the audit_requirements block names the exact columns the
two mandatory logs must carry. Everything here is immutable and pure, so
cards are safe to share across concurrent evaluation workers.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import CardValidationError, DslSyntaxError
from .dsl import parse_rule

STRATEGY_FAMILIES = ("trend", "mean_reversion", "intraday", "spread_arb", "portfolio")
EXECUTION_TIMINGS = ("bar_close",)
SIZING_RULES = ("all_in_all_out",)
CARD_VERSION = "1"

MANDATORY_FIELDS = (
    "strategy_family",
    "entry_rule",
    "exit_rule",
    "position_sizing_rule",
    "parameters",
    "constraints",
    "audit_requirements",
)

_PERCENT_RE = re.compile(r"^\s*([0-9]*\.?[0-9]+)\s*%\s*$")


@dataclass(frozen=True)
class TypedValue:
    """Parameter value with declared type; percents are stored as fractions."""

    type: str  # integer | real | percent
    value: float
    min: float | None = None
    max: float | None = None

    @classmethod
    def from_json(cls, raw) -> "TypedValue":
        if isinstance(raw, dict):
            vtype = raw.get("type")
            value = raw.get("value")
            vmin = raw.get("min")
            vmax = raw.get("max")
        else:
            vtype, value, vmin, vmax = None, raw, None, None
        if vtype is None:
            if isinstance(value, bool):
                raise ValueError("boolean parameters are not supported")
            if isinstance(value, int):
                vtype = "integer"
            elif isinstance(value, float):
                vtype = "real"
            elif isinstance(value, str) and _PERCENT_RE.match(value):
                vtype = "percent"
            else:
                raise ValueError(f"cannot infer parameter type from {value!r}")
        if vtype not in ("integer", "real", "percent"):
            raise ValueError(f"unknown parameter type {vtype!r}")
        if vtype == "percent":
            if isinstance(value, str):
                m = _PERCENT_RE.match(value)
                if not m:
                    raise ValueError(f"malformed percent {value!r}")
                value = float(m.group(1)) / 100.0
            else:
                value = float(value)
        elif vtype == "integer":
            if isinstance(value, float) and value != int(value):
                raise ValueError(f"integer parameter has fractional value {value}")
            value = int(value)
        else:
            value = float(value)
        return cls(type=vtype, value=value, min=vmin, max=vmax)

    def to_json(self):
        out = {"type": self.type, "value": self.value}
        if self.type == "percent":
            out["value"] = f"{self.value * 100:g}%"
        if self.min is not None:
            out["min"] = self.min
        if self.max is not None:
            out["max"] = self.max
        return out

    def range_violation(self) -> bool:
        lo, hi = self.min, self.max
        if lo is None and self.type == "integer":
            lo = 1  # lookbacks and windows must be whole bars
        if lo is None and self.type == "percent":
            lo = 0.0
        if hi is None and self.type == "percent":
            hi = 1.0
        if lo is not None and self.value < lo:
            return True
        if hi is not None and self.value > hi:
            return True
        return False

    def canonical(self):
        if self.type == "integer":
            return ["integer", int(self.value)]
        return [self.type, float(self.value)]


@dataclass(frozen=True)
class Constraints:
    max_leverage: float = 1.0
    allowed_assets: tuple = ()
    execution_timing: str = "bar_close"

    @classmethod
    def from_json(cls, raw: dict) -> "Constraints":
        return cls(
            max_leverage=raw.get("max_leverage"),
            allowed_assets=tuple(raw.get("allowed_assets") or ()),
            execution_timing=raw.get("execution_timing"),
        )

    def to_json(self):
        return {
            "max_leverage": self.max_leverage,
            "allowed_assets": list(self.allowed_assets),
            "execution_timing": self.execution_timing,
        }

    def allows(self, symbol: str) -> bool:
        return "*" in self.allowed_assets or symbol in self.allowed_assets


@dataclass(frozen=True)
class AuditRequirements:
    trade_log_columns: tuple = ()
    audit_log_columns: tuple = ()
    # audited indicator column -> DSL expression producing it
    indicators: tuple = ()  # ordered (name, rule text) pairs

    @classmethod
    def from_json(cls, raw: dict) -> "AuditRequirements":
        return cls(
            trade_log_columns=tuple(raw.get("trade_log_columns") or ()),
            audit_log_columns=tuple(raw.get("audit_log_columns") or ()),
            indicators=tuple((raw.get("indicators") or {}).items()),
        )

    def to_json(self):
        out = {
            "trade_log_columns": list(self.trade_log_columns),
            "audit_log_columns": list(self.audit_log_columns),
        }
        if self.indicators:
            out["indicators"] = dict(self.indicators)
        return out

    def indicator_map(self) -> dict:
        return dict(self.indicators)


@dataclass(frozen=True)
class CardMeta:
    multi_asset: bool = False
    intraday: bool = False

    @classmethod
    def from_json(cls, raw: dict) -> "CardMeta":
        raw = raw or {}
        return cls(multi_asset=bool(raw.get("multi_asset", False)),
                   intraday=bool(raw.get("intraday", False)))

    def to_json(self):
        return {"multi_asset": self.multi_asset, "intraday": self.intraday}


@dataclass(frozen=True)
class StrategyCard:
    strategy_name: str = ""
    strategy_family: str | None = None
    entry_rule: str | None = None
    exit_rule: str | None = None
    position_sizing_rule: str | None = None
    parameters: tuple = ()  # ordered (name, TypedValue) pairs
    constraints: Constraints | None = None
    audit_requirements: AuditRequirements | None = None
    meta: CardMeta = field(default_factory=CardMeta)
    card_version: str = CARD_VERSION

    @classmethod
    def from_dict(cls, raw: dict) -> "StrategyCard":
        """Lenient construction: missing/ill-typed fields become None so
        validate_schema can enumerate every violation."""
        params: list = []
        raw_params = raw.get("parameters")
        if isinstance(raw_params, dict):
            for name, value in raw_params.items():
                try:
                    params.append((name, TypedValue.from_json(value)))
                except (ValueError, TypeError):
                    params.append((name, None))
        constraints = None
        if isinstance(raw.get("constraints"), dict):
            constraints = Constraints.from_json(raw["constraints"])
        audit = None
        if isinstance(raw.get("audit_requirements"), dict):
            audit = AuditRequirements.from_json(raw["audit_requirements"])
        return cls(
            strategy_name=raw.get("strategy_name") or "",
            strategy_family=raw.get("strategy_family"),
            entry_rule=raw.get("entry_rule"),
            exit_rule=raw.get("exit_rule"),
            position_sizing_rule=raw.get("position_sizing_rule"),
            parameters=tuple(params),
            constraints=constraints,
            audit_requirements=audit,
            meta=CardMeta.from_json(raw.get("meta")),
            card_version=str(raw.get("card_version", CARD_VERSION)),
        )

    def to_dict(self) -> dict:
        return {
            "card_version": self.card_version,
            "strategy_name": self.strategy_name,
            "strategy_family": self.strategy_family,
            "entry_rule": self.entry_rule,
            "exit_rule": self.exit_rule,
            "position_sizing_rule": self.position_sizing_rule,
            "parameters": {name: tv.to_json() for name, tv in self.parameters},
            "constraints": self.constraints.to_json() if self.constraints else None,
            "audit_requirements": (
                self.audit_requirements.to_json() if self.audit_requirements else None
            ),
            "meta": self.meta.to_json(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)

    def parameter_values(self) -> dict:
        return {name: tv.value for name, tv in self.parameters if tv is not None}

    def parameter(self, name: str) -> TypedValue | None:
        for pname, tv in self.parameters:
            if pname == name:
                return tv
        return None


def parse_card_json(data: bytes) -> dict:
    """Decode card bytes to a JSON object; raises ValueError on anything else."""
    obj = json.loads(data.decode("utf-8"))
    if not isinstance(obj, dict):
        raise ValueError(f"card must be a JSON object, got {type(obj).__name__}")
    return obj


def load_card(path) -> StrategyCard:
    card = StrategyCard.from_dict(parse_card_json(Path(path).read_bytes()))
    violations = validate_schema(card)
    if violations:
        raise CardValidationError(violations)
    return card


def validate_schema(card: StrategyCard) -> list:
    """Every missing or ill-typed field yields one message naming the field path."""
    violations: list = []
    raw = {
        "strategy_family": card.strategy_family,
        "entry_rule": card.entry_rule,
        "exit_rule": card.exit_rule,
        "position_sizing_rule": card.position_sizing_rule,
        "parameters": card.parameters or None,
        "constraints": card.constraints,
        "audit_requirements": card.audit_requirements,
    }
    for name in MANDATORY_FIELDS:
        if raw[name] is None:
            violations.append(f"missing field: {name}")

    if card.strategy_family is not None and card.strategy_family not in STRATEGY_FAMILIES:
        violations.append(
            f"invalid strategy_family: {card.strategy_family!r} "
            f"(expected one of {', '.join(STRATEGY_FAMILIES)})"
        )

    for rule_field in ("entry_rule", "exit_rule"):
        text = getattr(card, rule_field)
        if text is None:
            continue
        if not isinstance(text, str) or not text.strip():
            violations.append(f"missing field: {rule_field}")
            continue
        try:
            parse_rule(text)
        except DslSyntaxError as exc:
            violations.append(f"{rule_field}: {exc}")

    sizing = card.position_sizing_rule
    if sizing is not None and sizing not in SIZING_RULES:
        try:
            parse_rule(sizing)
        except DslSyntaxError as exc:
            violations.append(f"position_sizing_rule: {exc}")

    for name, tv in card.parameters:
        if tv is None:
            violations.append(f"ill-typed parameter: {name}")
        elif tv.range_violation():
            violations.append(f"parameter out of range: {name}")

    if card.constraints is not None:
        c = card.constraints
        if not isinstance(c.max_leverage, (int, float)) or c.max_leverage < 1:
            violations.append("constraints.max_leverage must be a real >= 1")
        if not c.allowed_assets:
            violations.append("constraints.allowed_assets must be a non-empty set")
        if c.execution_timing not in EXECUTION_TIMINGS:
            violations.append(
                f"constraints.execution_timing must be one of {EXECUTION_TIMINGS}"
            )

    if card.audit_requirements is not None:
        a = card.audit_requirements
        if not a.trade_log_columns:
            violations.append("audit_requirements.trade_log_columns must be non-empty")
        if not a.audit_log_columns:
            violations.append("audit_requirements.audit_log_columns must be non-empty")
        for ind_name, ind_rule in a.indicators:
            try:
                parse_rule(ind_rule)
            except DslSyntaxError as exc:
                violations.append(f"audit_requirements.indicators.{ind_name}: {exc}")

    n_short = card.parameter("N_short")
    n_long = card.parameter("N_long")
    if n_short is not None and n_long is not None:
        if n_short.value >= n_long.value:
            violations.append("parameter out of range: N_short must be < N_long")

    return violations


def normalize_rule_text(text: str) -> str:
    """Canonical rule form: comments stripped, lowercased, whitespace collapsed."""
    without_comments = re.sub(r"#[^\n]*", " ", text)
    return re.sub(r"\s+", " ", without_comments).strip().lower()


def _canonical_json_bytes(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode("utf-8")


def canonicalize(card: StrategyCard) -> bytes:
    """Deterministic bytes over the core-logic fields.

    Invariant under key reordering of the source JSON, whitespace runs inside
    rule text, and line comments.
    """
    return _canonical_json_bytes(
        {
            "entry_rule": normalize_rule_text(card.entry_rule or ""),
            "exit_rule": normalize_rule_text(card.exit_rule or ""),
            "position_sizing_rule": normalize_rule_text(card.position_sizing_rule or ""),
            "strategy_family": card.strategy_family or "",
        }
    )


def core_logic_hash(card: StrategyCard) -> str:
    return hashlib.sha256(canonicalize(card)).hexdigest()


def semantic_hash(card: StrategyCard) -> str:
    """Digest over {entry_rule, exit_rule, params}; parameter drift changes it."""
    payload = {
        "entry_rule": normalize_rule_text(card.entry_rule or ""),
        "exit_rule": normalize_rule_text(card.exit_rule or ""),
        "params": {
            name: tv.canonical() for name, tv in card.parameters if tv is not None
        },
    }
    return hashlib.sha256(_canonical_json_bytes(payload)).hexdigest()


@dataclass(frozen=True)
class EquivalenceTolerances:
    eps_integer: float = 0.0  # frozen integers
    eps_real: float = 1e-6  # combined relative/absolute bound

    def __post_init__(self):
        if self.eps_integer != 0.0:
            raise ValueError("eps_integer must be exactly 0")
        if self.eps_real <= 0.0:
            raise ValueError("eps_real must be > 0")


DEFAULT_TOLERANCES = EquivalenceTolerances()


@dataclass(frozen=True)
class EquivalenceReport:
    equivalent: bool
    core_logic_hash_match: bool
    changed_parameters: tuple  # (name, old, new)
    changed_constraints: tuple  # paths
    changed_core_fields: tuple  # core-logic field names that differ
    drift_flag: str | None = None

    def changed_fields(self) -> list:
        fields = list(self.changed_core_fields)
        fields.extend(f"parameters.{name}" for name, _, _ in self.changed_parameters)
        fields.extend(self.changed_constraints)
        return fields


def _reals_close(a: float, b: float, eps: float) -> bool:
    return abs(a - b) < eps * max(1.0, abs(a), abs(b))


def check_equivalence(
    c0: StrategyCard,
    ck: StrategyCard,
    tol: EquivalenceTolerances = DEFAULT_TOLERANCES,
) -> EquivalenceReport:
    """Semantic equivalence: core-logic hash match, parameters within
    tolerance, and structurally identical constraints."""
    hash_match = core_logic_hash(c0) == core_logic_hash(ck)

    changed_core = []
    if not hash_match:
        for name in ("strategy_family", "entry_rule", "exit_rule", "position_sizing_rule"):
            v0, vk = getattr(c0, name), getattr(ck, name)
            if name != "strategy_family":
                v0 = normalize_rule_text(v0 or "")
                vk = normalize_rule_text(vk or "")
            if v0 != vk:
                changed_core.append(name)

    changed_params = []
    p0 = dict(c0.parameters)
    pk = dict(ck.parameters)
    for name in list(p0) + [n for n in pk if n not in p0]:
        a, b = p0.get(name), pk.get(name)
        if a is None or b is None:
            changed_params.append((name, a.value if a else None, b.value if b else None))
            continue
        if a.type == "integer" and b.type == "integer":
            same = a.value == b.value
        else:
            same = a.type == b.type and _reals_close(a.value, b.value, tol.eps_real)
        if not same:
            changed_params.append((name, a.value, b.value))

    changed_constraints = []
    k0, kk = c0.constraints, ck.constraints
    if (k0 is None) != (kk is None):
        changed_constraints.append("constraints")
    elif k0 is not None and kk is not None:
        if k0.max_leverage != kk.max_leverage:
            changed_constraints.append("constraints.max_leverage")
        if set(k0.allowed_assets) != set(kk.allowed_assets):
            changed_constraints.append("constraints.allowed_assets")
        if k0.execution_timing != kk.execution_timing:
            changed_constraints.append("constraints.execution_timing")

    equivalent = hash_match and not changed_params and not changed_constraints
    report = EquivalenceReport(
        equivalent=equivalent,
        core_logic_hash_match=hash_match,
        changed_parameters=tuple(changed_params),
        changed_constraints=tuple(changed_constraints),
        changed_core_fields=tuple(changed_core),
    )
    if not equivalent:
        report = replace(
            report,
            drift_flag="DRIFT_DETECTED: [" + ", ".join(report.changed_fields()) + "]",
        )
    return report


DRIFT_FLAG_PREFIX = "DRIFT_DETECTED"
INVALID_BASELINE_FLAG = "INVALID_BASELINE"


def apply_drift_penalty(scorecard, report: EquivalenceReport):
    """Zero out D1 and mark the iteration invalid as baseline when the cards
    are not equivalent; identity otherwise. Idempotent."""
    if report.equivalent:
        return scorecard
    flags = list(scorecard.flags)
    if not any(f.startswith(DRIFT_FLAG_PREFIX) for f in flags):
        flags.append(report.drift_flag)
    if INVALID_BASELINE_FLAG not in flags:
        flags.append(INVALID_BASELINE_FLAG)
    return scorecard.with_d1_zeroed(tuple(flags))

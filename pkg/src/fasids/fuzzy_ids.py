"""Fuzzy inference over event-frequency metrics.

Observations arrive as ``(pattern count, observation span)`` windows. Both
quantities are normalized to [0,1], fuzzified against five trapezoidal sets,
pushed through an associative matrix (or explicit IF/THEN rules) that maps
label pairs to a consequent, aggregated, and defuzzified by mean of maxima
into a crisp score that classifies into one of four severity labels.

The matrix is applied with rows bound to the time variable and columns to
the count variable. The shipped matrix places its hottest consequents at
short spans and low normalized counts, so the default metric configuration
maps each axis onto the grid reversed (``u -> 1 - u``); axis direction is
configurable per metric.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import yaml

logger = logging.getLogger(__name__)

X_LABELS = ("Very Small", "Small", "Medium", "High", "Very high")
T_LABELS = ("Very low", "Low", "Medium", "High", "Very high")
CONSEQUENT_LABELS = ("Non-Intrusive", "LP", "HP", "Intrusive")

DEFAULT_RESOLUTION = 1001

# Complementary ramps: each set's falling edge is the next set's rising edge,
# so memberships sum to one everywhere on [0,1].
DEFAULT_BREAKPOINTS = (
    (0.0, 0.0, 0.1, 0.25),
    (0.1, 0.25, 0.35, 0.5),
    (0.35, 0.5, 0.6, 0.75),
    (0.6, 0.75, 0.85, 0.95),
    (0.85, 0.95, 1.0, 1.0),
)


class FuzzyConfigError(Exception):
    """Raised for invalid fuzzy configuration (bounds, partitions, graphs)."""


class AxisMode(str, Enum):
    DIRECT = "direct"
    REVERSED = "reversed"

    def apply(self, u: float) -> float:
        return u if self is AxisMode.DIRECT else 1.0 - u


# ---------------------------------------------------------------------------
# Fuzzy sets and linguistic variables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FuzzySet:
    """Trapezoidal set over [0,1]: zero outside [a,d], one on [b,c]."""

    label: str
    a: float
    b: float
    c: float
    d: float

    def __post_init__(self):
        if not (self.a <= self.b <= self.c <= self.d):
            raise FuzzyConfigError(
                f"set {self.label!r}: breakpoints must be ordered, got "
                f"({self.a}, {self.b}, {self.c}, {self.d})")

    def membership(self, u: float) -> float:
        if u < self.a or u > self.d:
            return 0.0
        if self.b <= u <= self.c:
            return 1.0
        if u < self.b:
            return (u - self.a) / (self.b - self.a)
        return (self.d - u) / (self.d - self.c)


@dataclass(frozen=True)
class LinguisticVariable:
    """Five ordered fuzzy sets forming a partition of [0,1]."""

    name: str
    sets: tuple[FuzzySet, ...]

    def __post_init__(self):
        if len(self.sets) != 5:
            raise FuzzyConfigError(f"variable {self.name!r} needs exactly 5 sets")
        first, last = self.sets[0], self.sets[-1]
        if first.a != 0.0 or first.b != 0.0:
            raise FuzzyConfigError(f"variable {self.name!r}: leftmost set must shoulder at 0")
        if last.c != 1.0 or last.d != 1.0:
            raise FuzzyConfigError(f"variable {self.name!r}: rightmost set must shoulder at 1")
        for left, right in zip(self.sets, self.sets[1:]):
            if (left.c, left.d) != (right.a, right.b):
                raise FuzzyConfigError(
                    f"variable {self.name!r}: ramp {left.label!r}->{right.label!r} "
                    "is not complementary; memberships would not sum to 1")

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(s.label for s in self.sets)

    def label_index(self, label: str) -> int:
        for index, candidate in enumerate(self.labels):
            if candidate.lower() == label.lower():
                return index
        raise FuzzyConfigError(f"variable {self.name!r} has no label {label!r}")


def default_count_variable() -> LinguisticVariable:
    return LinguisticVariable(
        "x", tuple(FuzzySet(lab, *bp) for lab, bp in zip(X_LABELS, DEFAULT_BREAKPOINTS)))


def default_time_variable() -> LinguisticVariable:
    return LinguisticVariable(
        "t", tuple(FuzzySet(lab, *bp) for lab, bp in zip(T_LABELS, DEFAULT_BREAKPOINTS)))


def normalize(v: float, lo: float, hi: float) -> float:
    """Affine map of [lo,hi] onto [0,1], clamped outside the bounds."""
    if lo >= hi:
        raise FuzzyConfigError(f"bounds must satisfy min < max, got ({lo}, {hi})")
    return min(1.0, max(0.0, (v - lo) / (hi - lo)))


def fuzzify(u: float, var: LinguisticVariable) -> tuple[float, ...]:
    """Membership vector of a normalized value across the variable's sets."""
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"fuzzify expects u in [0,1], got {u}")
    return tuple(s.membership(u) for s in var.sets)


def apply_operator(op: str, a: float, b: float | None = None) -> float:
    """Degree combinators: AND=min, OR=max, NOT=1-a."""
    key = op.upper()
    if key == "NOT":
        if b is not None:
            raise ValueError("NOT takes a single degree")
        return 1.0 - a
    if b is None:
        raise ValueError(f"{key} needs two degrees")
    if key == "AND":
        return min(a, b)
    if key == "OR":
        return max(a, b)
    raise ValueError(f"unknown operator {op!r}")


# ---------------------------------------------------------------------------
# Associative matrix
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FamMatrix:
    """5x5 map from (time label, count label) to a consequent label."""

    row_labels: tuple[str, ...]
    col_labels: tuple[str, ...]
    grid: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        if len(self.grid) != len(self.row_labels) or any(
                len(row) != len(self.col_labels) for row in self.grid):
            raise FuzzyConfigError("matrix grid shape does not match its labels")

    def cell(self, t_label: str, x_label: str) -> str:
        i = self.row_labels.index(t_label)
        j = self.col_labels.index(x_label)
        return self.grid[i][j]

    def consequents(self) -> set[str]:
        return {label for row in self.grid for label in row}

    @classmethod
    def default(cls) -> "FamMatrix":
        return cls(
            row_labels=T_LABELS,
            col_labels=X_LABELS,
            grid=(
                ("LP", "LP", "Non-Intrusive", "Non-Intrusive", "Non-Intrusive"),
                ("LP", "LP", "LP", "Non-Intrusive", "Non-Intrusive"),
                ("HP", "LP", "LP", "LP", "Non-Intrusive"),
                ("HP", "HP", "HP", "LP", "LP"),
                ("Intrusive", "Intrusive", "HP", "HP", "HP"),
            ),
        )

    @classmethod
    def from_grid_text(cls, text: str) -> "FamMatrix":
        """Parse a tab-separated grid: header row of column labels, then one
        row label plus five cells per line."""
        rows = [line.split("\t") for line in text.splitlines()
                if line.strip() and not line.startswith("#")]
        if len(rows) != 6:
            raise FuzzyConfigError(f"matrix grid needs 6 rows, got {len(rows)}")
        col_labels = tuple(cell.strip() for cell in rows[0][1:])
        row_labels = tuple(row[0].strip() for row in rows[1:])
        grid = tuple(tuple(cell.strip() for cell in row[1:]) for row in rows[1:])
        return cls(row_labels=row_labels, col_labels=col_labels, grid=grid)

    @classmethod
    def from_file(cls, path) -> "FamMatrix":
        return cls.from_grid_text(Path(path).read_text(encoding="utf-8"))

    def to_grid_text(self) -> str:
        lines = ["t\\x\t" + "\t".join(self.col_labels)]
        for label, row in zip(self.row_labels, self.grid):
            lines.append(label + "\t" + "\t".join(row))
        return "\n".join(lines) + "\n"


def evaluate_fam(mu_x: Sequence[float], mu_t: Sequence[float],
                 fam: FamMatrix) -> dict[str, float]:
    """Fire every cell at min(row degree, column degree); per-consequent
    strength is the max over its cells."""
    strengths = {label: 0.0 for label in fam.consequents()}
    for i, t_degree in enumerate(mu_t):
        if t_degree == 0.0:
            continue
        for j, x_degree in enumerate(mu_x):
            if x_degree == 0.0:
                continue
            label = fam.grid[i][j]
            fired = min(t_degree, x_degree)
            if fired > strengths[label]:
                strengths[label] = fired
    return strengths


# ---------------------------------------------------------------------------
# Consequent scale, defuzzification, classification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConsequentScale:
    """Ordered anchor intervals on [0,1], one per consequent label."""

    anchors: tuple[tuple[str, float, float], ...]

    def __post_init__(self):
        if not self.anchors:
            raise FuzzyConfigError("scale needs at least one anchor interval")
        if self.anchors[0][1] != 0.0 or self.anchors[-1][2] != 1.0:
            raise FuzzyConfigError("anchor intervals must cover [0,1]")
        for (_, lo, hi), (_, next_lo, _) in zip(self.anchors, self.anchors[1:]):
            if hi != next_lo:
                raise FuzzyConfigError("anchor intervals must be contiguous")
        if any(lo >= hi for _, lo, hi in self.anchors):
            raise FuzzyConfigError("anchor intervals must be non-empty")

    @classmethod
    def default(cls) -> "ConsequentScale":
        return cls(anchors=(
            ("Non-Intrusive", 0.0, 0.25),
            ("LP", 0.25, 0.5),
            ("HP", 0.5, 0.75),
            ("Intrusive", 0.75, 1.0),
        ))

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(label for label, _, _ in self.anchors)

    def interval(self, label: str) -> tuple[float, float]:
        for candidate, lo, hi in self.anchors:
            if candidate == label:
                return lo, hi
        raise FuzzyConfigError(f"scale has no label {label!r}")

    def representative(self, label: str) -> float:
        lo, hi = self.interval(label)
        return (lo + hi) / 2.0

    def rank(self, label: str) -> int:
        return self.labels.index(label)


@dataclass(frozen=True)
class CrispResult:
    score: float
    rule_fired: bool


def defuzzify_mom(label_strengths: Mapping[str, float], scale: ConsequentScale,
                  resolution: int = DEFAULT_RESOLUTION) -> CrispResult:
    """Mean of maxima over a sampled aggregate membership.

    Each label contributes its (clipped) strength over its anchor interval;
    the sampled aggregate is the pointwise max, and the score is the mean of
    the samples attaining the global max. With no firing strength at all the
    score is 0.0 and the result is flagged unfired.
    """
    if resolution < 2:
        raise FuzzyConfigError("resolution must be at least 2")
    spans = []
    for label, lo, hi in scale.anchors:
        strength = label_strengths.get(label, 0.0)
        if strength > 0.0:
            spans.append((min(strength, 1.0), lo, hi))
    if not spans:
        return CrispResult(score=0.0, rule_fired=False)

    best = 0.0
    maxima: list[float] = []
    step = 1.0 / (resolution - 1)
    for k in range(resolution):
        u = k * step
        m = 0.0
        for strength, lo, hi in spans:
            if lo <= u <= hi and strength > m:
                m = strength
        if m > best:
            best = m
            maxima = [u]
        elif m == best and best > 0.0:
            maxima.append(u)
    return CrispResult(score=sum(maxima) / len(maxima), rule_fired=True)


def classify(score: float, scale: ConsequentScale) -> str:
    """Label whose anchor interval holds the score (lower-inclusive)."""
    if not 0.0 <= score <= 1.0:
        raise ValueError(f"score must lie in [0,1], got {score}")
    for label, lo, hi in scale.anchors:
        if lo <= score < hi:
            return label
    return scale.anchors[-1][0]


# ---------------------------------------------------------------------------
# Pattern counting and metric windows
# ---------------------------------------------------------------------------

def count_pattern(events: Iterable[tuple[float, str]], pattern: str,
                  window: tuple[float, float]) -> int:
    """Count events matching ``pattern`` with timestamps in [start, start+length)."""
    start, length = window
    if length <= 0:
        raise ValueError("window length must be positive")
    matcher = re.compile(pattern)
    end = start + length
    return sum(1 for ts, text in events if start <= ts < end and matcher.search(text))


@dataclass(frozen=True)
class MetricWindow:
    """One observation: how many pattern hits over what span, plus bounds."""

    metric: str
    x_count: int
    t_interval: float
    x_bounds: tuple[float, float]
    t_bounds: tuple[float, float]

    def __post_init__(self):
        if self.x_count < 0:
            raise ValueError("x_count must be non-negative")
        if self.t_interval <= 0:
            raise ValueError("t_interval must be positive")
        for lo, hi in (self.x_bounds, self.t_bounds):
            if lo >= hi:
                raise FuzzyConfigError(f"bounds must satisfy min < max, got ({lo}, {hi})")


# ---------------------------------------------------------------------------
# IF/THEN rules
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Is:
    var: str
    label: str


@dataclass(frozen=True)
class _Not:
    operand: object


@dataclass(frozen=True)
class _Binary:
    op: str  # "and" | "or"
    left: object
    right: object


@dataclass(frozen=True)
class FuzzyRule:
    """IF <expression over x/t labels> THEN <consequent label>."""

    antecedent: object
    consequent: str
    source: str = ""


def _tokenize_expr(text: str) -> list[str]:
    return re.findall(r"\(|\)|[^\s()]+", text)


class _ExprParser:
    """Recursive descent over: or > and > not > (expr) | var is <label>."""

    def __init__(self, tokens: list[str], variables: dict[str, LinguisticVariable]):
        self.tokens = tokens
        self.pos = 0
        self.variables = variables

    def peek(self) -> str | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self) -> str:
        token = self.peek()
        if token is None:
            raise FuzzyConfigError("unexpected end of rule expression")
        self.pos += 1
        return token

    def parse(self):
        node = self.parse_or()
        if self.peek() is not None:
            raise FuzzyConfigError(f"trailing tokens in rule expression: {self.tokens[self.pos:]}")
        return node

    def parse_or(self):
        node = self.parse_and()
        while self.peek() and self.peek().lower() == "or":
            self.take()
            node = _Binary("or", node, self.parse_and())
        return node

    def parse_and(self):
        node = self.parse_unary()
        while self.peek() and self.peek().lower() == "and":
            self.take()
            node = _Binary("and", node, self.parse_unary())
        return node

    def parse_unary(self):
        token = self.peek()
        if token is None:
            raise FuzzyConfigError("unexpected end of rule expression")
        if token.lower() == "not":
            self.take()
            return _Not(self.parse_unary())
        if token == "(":
            self.take()
            node = self.parse_or()
            if self.take() != ")":
                raise FuzzyConfigError("unbalanced parenthesis in rule expression")
            return node
        return self.parse_is()

    def parse_is(self):
        var = self.take().lower()
        if var not in self.variables:
            raise FuzzyConfigError(f"unknown rule variable {var!r}")
        if self.take().lower() != "is":
            raise FuzzyConfigError(f"expected 'is' after variable {var!r}")
        words = []
        while self.peek() and self.peek().lower() not in ("and", "or", ")"):
            words.append(self.take())
        if not words:
            raise FuzzyConfigError(f"missing label after '{var} is'")
        label = " ".join(words)
        index = self.variables[var].label_index(label)  # validates
        return _Is(var, self.variables[var].labels[index])


def parse_rule_expression(text: str, variables: dict[str, LinguisticVariable]):
    return _ExprParser(_tokenize_expr(text), variables).parse()


def evaluate_rule_expression(node, memberships: Mapping[str, Mapping[str, float]]) -> float:
    if isinstance(node, _Is):
        return memberships[node.var][node.label]
    if isinstance(node, _Not):
        return apply_operator("NOT", evaluate_rule_expression(node.operand, memberships))
    if isinstance(node, _Binary):
        return apply_operator(
            node.op.upper(),
            evaluate_rule_expression(node.left, memberships),
            evaluate_rule_expression(node.right, memberships),
        )
    raise TypeError(f"not a rule expression node: {node!r}")


# ---------------------------------------------------------------------------
# Concept graph
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExtractorSpec:
    """How the pipeline turns transactions into metric events."""

    kind: str  # "status" | "body" | "request"
    codes: tuple[int, ...] = ()
    pattern: str = ""


@dataclass(frozen=True)
class MetricConfig:
    name: str
    x_bounds: tuple[float, float]
    t_bounds: tuple[float, float]
    window_seconds: float
    x_axis: AxisMode = AxisMode.DIRECT
    t_axis: AxisMode = AxisMode.DIRECT
    scope: str = "session"  # "session" | "global"
    extract: tuple[ExtractorSpec, ...] = ()

    def __post_init__(self):
        if self.window_seconds <= 0:
            raise FuzzyConfigError(f"metric {self.name!r}: window must be positive")
        if self.scope not in ("session", "global"):
            raise FuzzyConfigError(f"metric {self.name!r}: scope must be session or global")
        for lo, hi in (self.x_bounds, self.t_bounds):
            if lo >= hi:
                raise FuzzyConfigError(
                    f"metric {self.name!r}: bounds must satisfy min < max, got ({lo}, {hi})")


@dataclass(frozen=True)
class FamEdge:
    metric: str
    fam: str


@dataclass(frozen=True)
class RuleEdge:
    metric: str
    rules: tuple[FuzzyRule, ...]


@dataclass(frozen=True)
class EventResult:
    score: float
    verdict: str
    rule_fired: bool
    strengths: tuple[tuple[str, float], ...] = ()


@dataclass(frozen=True)
class FcmGraph:
    """Single-pass concept graph: metric nodes feed suspicious-event nodes."""

    x_var: LinguisticVariable
    t_var: LinguisticVariable
    scale: ConsequentScale
    fams: dict[str, FamMatrix]
    metrics: dict[str, MetricConfig]
    events: dict[str, tuple[FamEdge | RuleEdge, ...]]
    resolution: int = DEFAULT_RESOLUTION
    alert_threshold: str = "HP"

    def __post_init__(self):
        for name, edges in self.events.items():
            if not edges:
                raise FuzzyConfigError(f"event {name!r} has no incoming edges")
            for edge in edges:
                if edge.metric not in self.metrics:
                    raise FuzzyConfigError(
                        f"event {name!r} references unknown metric {edge.metric!r}")
                if isinstance(edge, FamEdge) and edge.fam not in self.fams:
                    raise FuzzyConfigError(
                        f"event {name!r} references unknown matrix {edge.fam!r}")
        for name, fam in self.fams.items():
            if fam.row_labels != self.t_var.labels or fam.col_labels != self.x_var.labels:
                raise FuzzyConfigError(f"matrix {name!r} labels do not match the variables")
            unknown = fam.consequents() - set(self.scale.labels)
            if unknown:
                raise FuzzyConfigError(f"matrix {name!r} has unknown consequents {unknown}")
        if self.alert_threshold not in self.scale.labels:
            raise FuzzyConfigError(f"unknown alert threshold {self.alert_threshold!r}")


def default_graph() -> FcmGraph:
    return FcmGraph(
        x_var=default_count_variable(),
        t_var=default_time_variable(),
        scale=ConsequentScale.default(),
        fams={"bruteforce_dos": FamMatrix.default()},
        metrics={
            "login_failure": MetricConfig(
                name="login_failure",
                x_bounds=(0.0, 50.0),
                t_bounds=(0.0, 300.0),
                window_seconds=300.0,
                x_axis=AxisMode.REVERSED,
                t_axis=AxisMode.REVERSED,
                extract=(ExtractorSpec(kind="status", codes=(401, 403)),),
            ),
            "request_rate": MetricConfig(
                name="request_rate",
                x_bounds=(0.0, 200.0),
                t_bounds=(0.0, 60.0),
                window_seconds=60.0,
                x_axis=AxisMode.REVERSED,
                t_axis=AxisMode.REVERSED,
                extract=(ExtractorSpec(kind="request"),),
            ),
        },
        events={
            "brute_force": (FamEdge(metric="login_failure", fam="bruteforce_dos"),),
            "dos_flood": (FamEdge(metric="request_rate", fam="bruteforce_dos"),),
        },
    )


def fcm_evaluate(graph: FcmGraph, inputs: Mapping[str, MetricWindow],
                 only: Iterable[str] | None = None) -> dict[str, EventResult]:
    """One forward pass: fuzzify each supplied window, fire each edge, OR the
    strengths per event, then defuzzify and classify. Events whose metrics
    are missing are skipped with a diagnostic; ``only`` restricts evaluation
    to the named events."""
    wanted = set(only) if only is not None else set(graph.events)
    results: dict[str, EventResult] = {}
    memberships: dict[str, tuple[tuple[float, ...], tuple[float, ...]]] = {}
    for name, window in inputs.items():
        config = graph.metrics.get(name)
        if config is None:
            logger.warning("ignoring window for unknown metric %r", name)
            continue
        u_x = config.x_axis.apply(normalize(window.x_count, *window.x_bounds))
        u_t = config.t_axis.apply(normalize(window.t_interval, *window.t_bounds))
        memberships[name] = (fuzzify(u_x, graph.x_var), fuzzify(u_t, graph.t_var))

    for event, edges in graph.events.items():
        if event not in wanted:
            continue
        missing = [e.metric for e in edges if e.metric not in memberships]
        if missing:
            logger.warning("event %r skipped: missing metrics %s", event, sorted(set(missing)))
            continue
        strengths = {label: 0.0 for label in graph.scale.labels}
        for edge in edges:
            mu_x, mu_t = memberships[edge.metric]
            if isinstance(edge, FamEdge):
                fired = evaluate_fam(mu_x, mu_t, graph.fams[edge.fam])
            else:
                by_var = {
                    "x": dict(zip(graph.x_var.labels, mu_x)),
                    "t": dict(zip(graph.t_var.labels, mu_t)),
                }
                fired = {}
                for rule in edge.rules:
                    degree = evaluate_rule_expression(rule.antecedent, by_var)
                    if degree > fired.get(rule.consequent, 0.0):
                        fired[rule.consequent] = degree
            for label, strength in fired.items():
                if strength > strengths[label]:
                    strengths[label] = strength
        crisp = defuzzify_mom(strengths, graph.scale, graph.resolution)
        verdict = classify(crisp.score, graph.scale)
        results[event] = EventResult(
            score=crisp.score,
            verdict=verdict,
            rule_fired=crisp.rule_fired,
            strengths=tuple(sorted(strengths.items())),
        )
    return results


# ---------------------------------------------------------------------------
# Configuration loading
# ---------------------------------------------------------------------------

def _variable_from_config(name: str, spec: Mapping, fallback: LinguisticVariable) -> LinguisticVariable:
    if not spec:
        return fallback
    labels = spec.get("labels", list(fallback.labels))
    breakpoints = spec.get("breakpoints", {})
    sets = []
    for index, label in enumerate(labels):
        points = breakpoints.get(label, DEFAULT_BREAKPOINTS[index])
        if len(points) != 4:
            raise FuzzyConfigError(f"variable {name!r}: {label!r} needs 4 breakpoints")
        sets.append(FuzzySet(label, *(float(p) for p in points)))
    return LinguisticVariable(name, tuple(sets))


def _pair(value, what: str) -> tuple[float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise FuzzyConfigError(f"{what} must be a [min, max] pair, got {value!r}")
    return float(value[0]), float(value[1])


def _axis(value, what: str) -> AxisMode:
    try:
        return AxisMode(str(value))
    except ValueError:
        raise FuzzyConfigError(f"{what}: axis must be direct or reversed, got {value!r}") from None


def load_fuzzy_config(path) -> FcmGraph:
    """Build an :class:`FcmGraph` from a YAML file.

    Sections: ``variables`` (breakpoints), ``consequents`` (anchor
    intervals), ``fam_matrices`` (inline ``grid`` or ``grid_file``),
    ``metrics`` (bounds, window, axis direction, extractors) and ``events``
    (edges). Missing sections fall back to the built-in defaults.
    """
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise FuzzyConfigError(f"{path}: {exc}") from None
    if not isinstance(doc, dict):
        raise FuzzyConfigError(f"{path}: top level must be a mapping")

    variables = doc.get("variables", {})
    x_var = _variable_from_config("x", variables.get("x", {}), default_count_variable())
    t_var = _variable_from_config("t", variables.get("t", {}), default_time_variable())

    consequents = doc.get("consequents")
    if consequents:
        anchors = []
        for label in consequents.get("labels", CONSEQUENT_LABELS):
            lo, hi = _pair(consequents.get("anchors", {}).get(label), f"anchor for {label!r}")
            anchors.append((label, lo, hi))
        scale = ConsequentScale(anchors=tuple(anchors))
    else:
        scale = ConsequentScale.default()

    fams: dict[str, FamMatrix] = {}
    for name, spec in (doc.get("fam_matrices") or {}).items():
        if "grid_file" in spec:
            fams[name] = FamMatrix.from_file(path.parent / spec["grid_file"])
        elif "grid" in spec:
            fams[name] = FamMatrix(
                row_labels=t_var.labels,
                col_labels=x_var.labels,
                grid=tuple(tuple(str(c) for c in row) for row in spec["grid"]),
            )
        else:
            raise FuzzyConfigError(f"matrix {name!r} needs grid or grid_file")

    metrics: dict[str, MetricConfig] = {}
    for name, spec in (doc.get("metrics") or {}).items():
        extract = []
        for ext in spec.get("extract", []):
            kind = ext.get("kind")
            if kind == "status":
                extract.append(ExtractorSpec(
                    kind="status", codes=tuple(int(c) for c in ext.get("codes", []))))
            elif kind == "body":
                pattern = ext.get("pattern", "")
                try:
                    re.compile(pattern)
                except re.error as exc:
                    raise FuzzyConfigError(
                        f"metric {name!r}: bad body pattern {pattern!r}: {exc}") from None
                extract.append(ExtractorSpec(kind="body", pattern=pattern))
            elif kind == "request":
                extract.append(ExtractorSpec(kind="request"))
            else:
                raise FuzzyConfigError(f"metric {name!r}: unknown extractor kind {kind!r}")
        metrics[name] = MetricConfig(
            name=name,
            x_bounds=_pair(spec.get("x_bounds"), f"metric {name!r} x_bounds"),
            t_bounds=_pair(spec.get("t_bounds"), f"metric {name!r} t_bounds"),
            window_seconds=float(spec.get("window_seconds", 60.0)),
            x_axis=_axis(spec.get("x_axis", "direct"), f"metric {name!r}"),
            t_axis=_axis(spec.get("t_axis", "direct"), f"metric {name!r}"),
            scope=str(spec.get("scope", "session")),
            extract=tuple(extract),
        )

    events: dict[str, tuple[FamEdge | RuleEdge, ...]] = {}
    rule_vars = {"x": x_var, "t": t_var}
    for name, spec in (doc.get("events") or {}).items():
        edges: list[FamEdge | RuleEdge] = []
        for edge_spec in spec.get("edges", []):
            metric = edge_spec.get("metric")
            if metric is None:
                raise FuzzyConfigError(f"event {name!r}: edge needs a metric")
            if "fam" in edge_spec:
                edges.append(FamEdge(metric=metric, fam=edge_spec["fam"]))
            elif "rules" in edge_spec:
                rules = []
                for rule_spec in edge_spec["rules"]:
                    condition = rule_spec.get("if", "")
                    consequent = str(rule_spec.get("then", ""))
                    if consequent not in scale.labels:
                        raise FuzzyConfigError(
                            f"event {name!r}: unknown consequent {consequent!r}")
                    rules.append(FuzzyRule(
                        antecedent=parse_rule_expression(condition, rule_vars),
                        consequent=consequent,
                        source=condition,
                    ))
                edges.append(RuleEdge(metric=metric, rules=tuple(rules)))
            else:
                raise FuzzyConfigError(f"event {name!r}: edge needs fam or rules")
        events[name] = tuple(edges)

    if not metrics and not events:
        defaults = default_graph()
        metrics, events = defaults.metrics, defaults.events

    defuzz = doc.get("defuzzify") or {}
    graph = FcmGraph(
        x_var=x_var,
        t_var=t_var,
        scale=scale,
        fams=fams or {"bruteforce_dos": FamMatrix.default()},
        metrics=metrics,
        events=events,
        resolution=int(defuzz.get("resolution", DEFAULT_RESOLUTION)),
        alert_threshold=str(doc.get("alert_threshold", "HP")),
    )
    return graph

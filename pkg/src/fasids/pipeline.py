"""End-to-end wiring: header rules first, payload scan alongside, fuzzy on misses.

Every transaction is parsed and run against the rule-base; its body is
scanned by the payload analyzer regardless of the header verdict. Only
transactions that raised neither a header-rule nor a payload alert feed the
frequency metrics, and fuzzy verdicts are produced when a metric window
closes (or at end of input). Alerts stream out in input order as JSON
objects, one per line.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path

from fasids.fuzzy_ids import (
    ConsequentScale,
    FcmGraph,
    MetricConfig,
    MetricWindow,
    fcm_evaluate,
    load_fuzzy_config,
)
from fasids.http_ingest import (
    HttpTransaction,
    dispatch,
    parse_header,
    read_capture,
)
from fasids.payload_analyzer import (
    ScriptScanConfig,
    SignatureTable,
    scan_payload,
)
from fasids.rule_engine import RuleBase, RuleTrigger, interpret, load_rule_file

logger = logging.getLogger(__name__)

# Spans shorter than this read as an instantaneous burst rather than zero.
MIN_OBSERVED_SPAN = 0.001


class ConfigError(Exception):
    """Raised when the run configuration cannot be loaded."""


class AlertSeverity(str, Enum):
    INFO = "info"
    LP = "LP"
    HP = "HP"
    INTRUSIVE = "intrusive"

    @property
    def rank(self) -> int:
        return ("info", "LP", "HP", "intrusive").index(self.value)


def severity_for_verdict(verdict: str, scale: ConsequentScale) -> AlertSeverity:
    """Map a consequent label onto the alert severity ladder by rank."""
    rank = scale.rank(verdict)
    top = len(scale.labels) - 1
    if rank == 0:
        return AlertSeverity.INFO
    if rank == top:
        return AlertSeverity.INTRUSIVE
    midpoint = (top + 1) / 2
    return AlertSeverity.LP if rank < midpoint else AlertSeverity.HP


@dataclass(frozen=True)
class Alert:
    source: str  # "header-rule" | "payload" | "fuzzy"
    id: str | int
    severity: AlertSeverity
    session_id: str
    timestamp: float
    message: str
    evidence: str = ""

    def to_json(self) -> str:
        return json.dumps({
            "source": self.source,
            "id": self.id,
            "severity": self.severity.value,
            "session_id": self.session_id,
            "timestamp": self.timestamp,
            "message": self.message,
            "evidence": self.evidence,
        }, ensure_ascii=False)


def data_path(*parts: str) -> Path:
    """Path to a bundled data file."""
    return Path(str(resources.files("fasids").joinpath("data", *parts)))


DEFAULT_RULES = data_path("rules", "default.rules")
DEFAULT_SIGNATURES = data_path("signatures", "default.sig")
DEFAULT_FUZZY = data_path("fuzzy", "default.yaml")


@dataclass
class RunConfig:
    input_path: Path
    input_format: str = "raw"
    rules_path: Path = DEFAULT_RULES
    signatures_path: Path = DEFAULT_SIGNATURES
    fuzzy_path: Path = DEFAULT_FUZZY
    patterns_path: Path | None = None
    legacy_record_names: bool = False
    strict_rule_values: bool = False
    enable_payload: bool = True
    enable_fuzzy: bool = True

    def __post_init__(self):
        self.input_path = Path(self.input_path)
        self.rules_path = Path(self.rules_path)
        self.signatures_path = Path(self.signatures_path)
        self.fuzzy_path = Path(self.fuzzy_path)
        if self.patterns_path is not None:
            self.patterns_path = Path(self.patterns_path)
        if self.input_format not in ("raw", "jsonl"):
            raise ConfigError(f"unknown input format {self.input_format!r}")
        for label, path in (
            ("input", self.input_path),
            ("rules", self.rules_path),
            ("signatures", self.signatures_path),
            ("fuzzy config", self.fuzzy_path),
        ):
            if not path.exists():
                raise ConfigError(f"{label} path does not exist: {path}")
        if self.patterns_path is not None and not self.patterns_path.exists():
            raise ConfigError(f"patterns path does not exist: {self.patterns_path}")


@dataclass
class LoadedStages:
    rulebase: RuleBase
    signatures: SignatureTable
    script_config: ScriptScanConfig
    graph: FcmGraph


def load_stages(config: RunConfig) -> LoadedStages:
    try:
        rulebase = load_rule_file(config.rules_path, strict_values=config.strict_rule_values)
        signatures = SignatureTable.from_file(config.signatures_path)
        script_config = (ScriptScanConfig.from_file(config.patterns_path)
                         if config.patterns_path else ScriptScanConfig())
        graph = load_fuzzy_config(config.fuzzy_path)
    except Exception as exc:
        raise ConfigError(str(exc)) from exc
    return LoadedStages(rulebase, signatures, script_config, graph)


# ---------------------------------------------------------------------------
# Metric extraction and windowing
# ---------------------------------------------------------------------------

def _status_code(txn: HttpTransaction) -> int | None:
    if txn.kind != "response":
        return None
    parts = txn.start_line.split()
    if len(parts) >= 2 and parts[1].isdigit():
        return int(parts[1])
    return None


def transaction_matches_metric(txn: HttpTransaction, metric: MetricConfig) -> bool:
    """Does this transaction count as one event for the metric?"""
    for extractor in metric.extract:
        if extractor.kind == "status":
            code = _status_code(txn)
            if code is not None and code in extractor.codes:
                return True
        elif extractor.kind == "body":
            if extractor.pattern and re.search(
                    extractor.pattern,
                    txn.body.decode("utf-8", errors="replace"),
                    re.IGNORECASE):
                return True
        elif extractor.kind == "request":
            if txn.kind == "request":
                return True
    return False


@dataclass
class _OpenWindow:
    start: float
    last: float
    count: int
    session_id: str


@dataclass(frozen=True)
class ClosedWindow:
    metric: str
    window: MetricWindow
    session_id: str
    last_timestamp: float


class MetricAccumulator:
    """Tumbling per-scope windows over metric events.

    A window opens at the first event and closes when an event arrives past
    its span (or at flush). The observation interval is the span between the
    first and last event, the full window length for a lone event, and a
    minimum burst span when everything lands on one instant.
    """

    def __init__(self, graph: FcmGraph):
        self.graph = graph
        self.open_windows: dict[tuple[str, str], _OpenWindow] = {}

    def _close(self, metric_name: str, state: _OpenWindow) -> ClosedWindow:
        config = self.graph.metrics[metric_name]
        span = state.last - state.start
        if state.count <= 1:
            interval = config.window_seconds
        else:
            interval = max(span, MIN_OBSERVED_SPAN)
        window = MetricWindow(
            metric=metric_name,
            x_count=state.count,
            t_interval=interval,
            x_bounds=config.x_bounds,
            t_bounds=config.t_bounds,
        )
        return ClosedWindow(metric_name, window, state.session_id, state.last)

    def add(self, metric_name: str, session_id: str, timestamp: float) -> list[ClosedWindow]:
        config = self.graph.metrics[metric_name]
        scope_key = session_id if config.scope == "session" else "*"
        key = (metric_name, scope_key)
        state = self.open_windows.get(key)
        closed: list[ClosedWindow] = []
        if state is not None and timestamp >= state.start + config.window_seconds:
            closed.append(self._close(metric_name, state))
            state = None
        if state is None:
            self.open_windows[key] = _OpenWindow(
                start=timestamp, last=timestamp, count=1, session_id=session_id)
        else:
            state.count += 1
            state.last = max(state.last, timestamp)
            state.session_id = session_id
        return closed

    def flush(self) -> list[ClosedWindow]:
        closed = [self._close(metric, state)
                  for (metric, _), state in sorted(self.open_windows.items())]
        self.open_windows.clear()
        return closed


def _single_metric_events(graph: FcmGraph) -> dict[str, list[str]]:
    """Event names keyed by metric, for events fed by exactly one metric."""
    by_metric: dict[str, list[str]] = {}
    for event, edges in graph.events.items():
        metrics = {edge.metric for edge in edges}
        if len(metrics) == 1:
            by_metric.setdefault(next(iter(metrics)), []).append(event)
    return by_metric


def _multi_metric_events(graph: FcmGraph) -> dict[str, set[str]]:
    """Events fed by several metrics; evaluated at flush from the latest windows."""
    return {
        event: {edge.metric for edge in edges}
        for event, edges in graph.events.items()
        if len({edge.metric for edge in edges}) > 1
    }


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

@dataclass
class PipelineResult:
    alerts: list[Alert] = field(default_factory=list)
    transactions: int = 0
    rejected_entries: int = 0
    violations: int = 0

    def summary(self) -> dict:
        by_source: dict[str, int] = {}
        by_severity: dict[str, int] = {}
        for alert in self.alerts:
            by_source[alert.source] = by_source.get(alert.source, 0) + 1
            by_severity[alert.severity.value] = by_severity.get(alert.severity.value, 0) + 1
        return {
            "transactions": self.transactions,
            "rejected_entries": self.rejected_entries,
            "spec_violations": self.violations,
            "alerts": len(self.alerts),
            "alerts_by_source": by_source,
            "alerts_by_severity": by_severity,
        }


def _witness_evidence(trigger: RuleTrigger) -> str:
    parts = [f"#{hit.object_number}@{hit.record_index}={hit.matched_value}"
             for hit in trigger.witness]
    return "; ".join(parts)[:256]


def _fuzzy_alerts(graph: FcmGraph, windows: dict[str, ClosedWindow],
                  event_names: list[str]) -> list[Alert]:
    results = fcm_evaluate(graph, {m: c.window for m, c in windows.items()},
                           only=event_names)
    alerts = []
    threshold_rank = graph.scale.rank(graph.alert_threshold)
    latest = max(windows.values(), key=lambda c: c.last_timestamp)
    evidence = "; ".join(
        f"{c.window.metric}: {c.window.x_count} events in {c.window.t_interval:.3f}s"
        for _, c in sorted(windows.items()))
    for event in sorted(event_names):
        result = results.get(event)
        if result is None or not result.rule_fired:
            continue
        if graph.scale.rank(result.verdict) < threshold_rank:
            continue
        alerts.append(Alert(
            source="fuzzy",
            id=event,
            severity=severity_for_verdict(result.verdict, graph.scale),
            session_id=latest.session_id,
            timestamp=latest.last_timestamp,
            message=f"{event}: {result.verdict} (score {result.score:.3f})",
            evidence=evidence,
        ))
    return alerts


def _process_entry(entry, config: RunConfig, stages: LoadedStages,
                   accumulator: MetricAccumulator,
                   events_by_metric: dict[str, list[str]],
                   last_closed: dict[str, ClosedWindow],
                   result: PipelineResult) -> None:
    graph = stages.graph
    alerts_before = len(result.alerts)
    txn, violations = dispatch(entry)
    result.violations += len(violations)
    if txn is None:
        result.rejected_entries += 1
        logger.warning("session %s: entry rejected: %s",
                       entry.session_id, violations[0].description)
        return
    result.transactions += 1

    records, header_violations = parse_header(txn)
    result.violations += len(header_violations)
    triggers, _miss = interpret(records, stages.rulebase)
    for trigger in triggers:
        result.alerts.append(Alert(
            source="header-rule",
            id=trigger.rule_number,
            severity=AlertSeverity.INTRUSIVE,
            session_id=txn.session_id,
            timestamp=txn.timestamp,
            message=trigger.message or f"rule {trigger.rule_number} triggered",
            evidence=_witness_evidence(trigger),
        ))

    if config.enable_payload and txn.body:
        for payload_alert in scan_payload(
                txn.body, txn.content_encoding,
                stages.signatures, stages.script_config):
            result.alerts.append(Alert(
                source="payload",
                id=payload_alert.kind.value,
                severity=AlertSeverity.INTRUSIVE,
                session_id=txn.session_id,
                timestamp=txn.timestamp,
                message=payload_alert.detail or payload_alert.kind.value,
                evidence=payload_alert.evidence,
            ))

    transaction_alerted = len(result.alerts) > alerts_before
    if config.enable_fuzzy and not transaction_alerted:
        for metric_name in sorted(graph.metrics):
            metric = graph.metrics[metric_name]
            if not transaction_matches_metric(txn, metric):
                continue
            for closed in accumulator.add(metric_name, txn.session_id, txn.timestamp):
                last_closed[closed.metric] = closed
                result.alerts.extend(_fuzzy_alerts(
                    graph, {closed.metric: closed},
                    events_by_metric.get(metric_name, [])))


def run_pipeline(config: RunConfig, stages: LoadedStages | None = None) -> PipelineResult:
    """Process a capture and return the alert stream plus run counters.

    Per-transaction failures are isolated: a transaction that blows up is
    logged and skipped, and the run continues.
    """
    stages = stages or load_stages(config)
    graph = stages.graph
    accumulator = MetricAccumulator(graph)
    events_by_metric = _single_metric_events(graph)
    joint_events = _multi_metric_events(graph)
    last_closed: dict[str, ClosedWindow] = {}
    result = PipelineResult()

    try:
        entries = read_capture(config.input_path, config.input_format)
    except Exception as exc:
        raise ConfigError(str(exc)) from exc

    for entry in entries:
        try:
            _process_entry(entry, config, stages, accumulator,
                           events_by_metric, last_closed, result)
        except Exception:
            logger.exception("session %s: transaction at t=%.3f failed; continuing",
                             entry.session_id, entry.timestamp)

    if config.enable_fuzzy:
        for closed in accumulator.flush():
            last_closed[closed.metric] = closed
            result.alerts.extend(_fuzzy_alerts(
                graph, {closed.metric: closed},
                events_by_metric.get(closed.metric, [])))
        for event, needed in sorted(joint_events.items()):
            if needed <= set(last_closed):
                result.alerts.extend(_fuzzy_alerts(
                    graph, {m: last_closed[m] for m in needed}, [event]))
            else:
                logger.warning("event %r never evaluated: metrics %s had no windows",
                               event, sorted(needed - set(last_closed)))

    return result


def write_alerts(alerts: list[Alert], out_path: Path | None) -> str:
    text = "".join(alert.to_json() + "\n" for alert in alerts)
    if out_path is not None:
        Path(out_path).write_text(text, encoding="utf-8")
    return text


# ---------------------------------------------------------------------------
# Labeled-corpus report
# ---------------------------------------------------------------------------

STAGE_CONFIGURATIONS = (
    ("header", False, False),
    ("header+payload", True, False),
    ("header+payload+fuzzy", True, True),
)


@dataclass(frozen=True)
class CorpusEntry:
    path: Path
    label: str  # "malicious" | "benign"
    kind: str = ""


@dataclass(frozen=True)
class ReportRow:
    configuration: str
    total_malicious: int
    detected: int
    detection_rate: float
    total_benign: int
    false_alarms: int
    false_positive_rate: float


def read_corpus_labels(corpus_dir: Path) -> list[CorpusEntry]:
    """Read ``labels.txt`` (``<relative-path> <malicious|benign> [kind]``)."""
    corpus_dir = Path(corpus_dir)
    labels_path = corpus_dir / "labels.txt"
    if not labels_path.exists():
        raise ConfigError(f"no labels.txt in corpus directory {corpus_dir}")
    entries: list[CorpusEntry] = []
    labeled: set[Path] = {labels_path.resolve()}
    for lineno, raw_line in enumerate(labels_path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) < 2 or fields[1] not in ("malicious", "benign"):
            logger.warning("%s:%d: skipping unlabeled or malformed entry: %s",
                           labels_path, lineno, line)
            continue
        path = corpus_dir / fields[0]
        if not path.exists():
            logger.warning("%s:%d: listed file missing: %s", labels_path, lineno, fields[0])
            continue
        labeled.add(path.resolve())
        entries.append(CorpusEntry(path=path, label=fields[1],
                                   kind=fields[2] if len(fields) > 2 else ""))
    for path in sorted(corpus_dir.rglob("*")):
        if path.is_file() and path.resolve() not in labeled:
            logger.warning("corpus file without a label skipped: %s", path)
    return entries


def corpus_report(corpus_dir: Path,
                  rules_path: Path = DEFAULT_RULES,
                  signatures_path: Path = DEFAULT_SIGNATURES,
                  fuzzy_path: Path = DEFAULT_FUZZY) -> list[ReportRow]:
    """Detection and false-positive rates per component combination."""
    entries = read_corpus_labels(Path(corpus_dir))
    rows: list[ReportRow] = []
    for name, payload_on, fuzzy_on in STAGE_CONFIGURATIONS:
        detected = false_alarms = total_mal = total_ben = 0
        for entry in entries:
            config = RunConfig(
                input_path=entry.path,
                input_format="jsonl" if entry.path.suffix == ".jsonl" else "raw",
                rules_path=rules_path,
                signatures_path=signatures_path,
                fuzzy_path=fuzzy_path,
                enable_payload=payload_on,
                enable_fuzzy=fuzzy_on,
            )
            alerted = bool(run_pipeline(config).alerts)
            if entry.label == "malicious":
                total_mal += 1
                detected += alerted
            else:
                total_ben += 1
                false_alarms += alerted
        rows.append(ReportRow(
            configuration=name,
            total_malicious=total_mal,
            detected=detected,
            detection_rate=detected / total_mal if total_mal else 0.0,
            total_benign=total_ben,
            false_alarms=false_alarms,
            false_positive_rate=false_alarms / total_ben if total_ben else 0.0,
        ))
    return rows


def report_csv(rows: list[ReportRow]) -> str:
    lines = ["configuration,total_malicious,detected,detection_rate,"
             "total_benign,false_alarms,false_positive_rate"]
    for row in rows:
        lines.append(
            f"{row.configuration},{row.total_malicious},{row.detected},"
            f"{row.detection_rate:.4f},{row.total_benign},{row.false_alarms},"
            f"{row.false_positive_rate:.4f}")
    return "\n".join(lines) + "\n"

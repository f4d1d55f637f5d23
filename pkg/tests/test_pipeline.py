"""Pipeline wiring: staging, the miss gate, alerting, corpus report, CLI."""

from __future__ import annotations

import base64
import json
from pathlib import Path

import pytest

from fasids.cli import main
from fasids.fuzzy_ids import AxisMode, default_graph
from fasids.pipeline import (
    DEFAULT_FUZZY,
    DEFAULT_RULES,
    DEFAULT_SIGNATURES,
    Alert,
    AlertSeverity,
    ConfigError,
    MetricAccumulator,
    RunConfig,
    corpus_report,
    data_path,
    read_corpus_labels,
    report_csv,
    run_pipeline,
    severity_for_verdict,
    write_alerts,
)

CORPUS = data_path("corpus")


def jsonl_entry(ts, session, direction, data: bytes) -> str:
    return json.dumps({"ts": ts, "session": session, "dir": direction,
                       "data_b64": base64.b64encode(data).decode("ascii")})


def response(body: bytes, status: bytes = b"200 OK", extra: bytes = b"") -> bytes:
    return (b"HTTP/1.1 " + status + b"\r\nContent-Type: text/html\r\n" + extra
            + b"Content-Length: " + str(len(body)).encode() + b"\r\n\r\n" + body)


def request(uri: bytes = b"/", extra: bytes = b"") -> bytes:
    return b"GET " + uri + b" HTTP/1.1\r\nHost: example.test\r\n" + extra + b"\r\n"


def config_for(path: Path, **kwargs) -> RunConfig:
    fmt = "jsonl" if path.suffix == ".jsonl" else "raw"
    return RunConfig(input_path=path, input_format=fmt, **kwargs)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def test_bundled_defaults_exist():
    for path in (DEFAULT_RULES, DEFAULT_SIGNATURES, DEFAULT_FUZZY):
        assert path.exists(), path


def test_run_config_rejects_missing_paths(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig(input_path=tmp_path / "nope")
    capture = tmp_path / "c.jsonl"
    capture.write_text("")
    with pytest.raises(ConfigError):
        RunConfig(input_path=capture, rules_path=tmp_path / "missing.rules")
    with pytest.raises(ConfigError):
        RunConfig(input_path=capture, input_format="pcap")


# ---------------------------------------------------------------------------
# severity mapping
# ---------------------------------------------------------------------------

def test_severity_ladder():
    scale = default_graph().scale
    assert severity_for_verdict("Non-Intrusive", scale) is AlertSeverity.INFO
    assert severity_for_verdict("LP", scale) is AlertSeverity.LP
    assert severity_for_verdict("HP", scale) is AlertSeverity.HP
    assert severity_for_verdict("Intrusive", scale) is AlertSeverity.INTRUSIVE
    assert AlertSeverity.INFO.rank < AlertSeverity.LP.rank < AlertSeverity.HP.rank \
        < AlertSeverity.INTRUSIVE.rank


# ---------------------------------------------------------------------------
# metric windows
# ---------------------------------------------------------------------------

def test_accumulator_tumbles_windows():
    graph = default_graph()  # login window is 300 s
    acc = MetricAccumulator(graph)
    assert acc.add("login_failure", "s", 0.0) == []
    assert acc.add("login_failure", "s", 100.0) == []
    (closed,) = acc.add("login_failure", "s", 301.0)
    assert closed.window.x_count == 2
    assert closed.window.t_interval == pytest.approx(100.0)
    (tail,) = acc.flush()
    assert tail.window.x_count == 1
    assert tail.window.t_interval == pytest.approx(300.0)  # lone event: full window


def test_accumulator_instant_burst_gets_minimum_span():
    acc = MetricAccumulator(default_graph())
    for _ in range(5):
        acc.add("login_failure", "s", 42.0)
    (closed,) = acc.flush()
    assert closed.window.x_count == 5
    assert closed.window.t_interval == pytest.approx(0.001)


def test_accumulator_scopes_sessions_separately():
    acc = MetricAccumulator(default_graph())
    acc.add("login_failure", "a", 0.0)
    acc.add("login_failure", "b", 1.0)
    closed = acc.flush()
    assert sorted(c.session_id for c in closed) == ["a", "b"]


# ---------------------------------------------------------------------------
# pipeline behaviour
# ---------------------------------------------------------------------------

def test_xss_page_raises_one_payload_alert_only(tmp_path):
    page = tmp_path / "xss.raw"
    page.write_bytes(response(b"<img src='javascript:steal()'>"))
    result = run_pipeline(config_for(page))
    assert [a.source for a in result.alerts] == ["payload"]
    assert result.alerts[0].id == "tag-attribute-injection"
    assert result.alerts[0].severity is AlertSeverity.INTRUSIVE


def test_traversal_request_triggers_header_rule_and_gates_fuzzy(tmp_path):
    attack = tmp_path / "traversal.raw"
    attack.write_bytes(request(b"/app", b"Cookie: theme=../../etc/passwd\r\n"))
    result = run_pipeline(config_for(attack))
    sources = [a.source for a in result.alerts]
    assert sources == ["header-rule"]
    assert result.alerts[0].id == 4
    assert "#6@" in result.alerts[0].evidence


def test_benign_traffic_is_quiet(tmp_path):
    benign = tmp_path / "ok.raw"
    benign.write_bytes(request(b"/index.htm"))
    result = run_pipeline(config_for(benign))
    assert result.alerts == []
    assert result.transactions == 1


def test_bundled_bruteforce_trace_flags_at_least_hp():
    result = run_pipeline(config_for(CORPUS / "bruteforce.jsonl"))
    fuzzy = [a for a in result.alerts if a.source == "fuzzy"]
    assert fuzzy, "expected fuzzy alerts for the brute-force trace"
    assert all(a.severity.rank >= AlertSeverity.HP.rank for a in fuzzy)
    brute = next(a for a in fuzzy if a.id == "brute_force")
    assert brute.severity is AlertSeverity.INTRUSIVE
    assert "login_failure: 30 events" in brute.evidence


def test_bruteforce_trace_is_missed_without_fuzzy():
    result = run_pipeline(config_for(CORPUS / "bruteforce.jsonl", enable_fuzzy=False))
    assert result.alerts == []


def test_fuzzy_alert_identity_resolves_to_input(tmp_path):
    result = run_pipeline(config_for(CORPUS / "bruteforce.jsonl"))
    timestamps = set()
    sessions = set()
    for line in (CORPUS / "bruteforce.jsonl").read_text().splitlines():
        obj = json.loads(line)
        timestamps.add(round(obj["ts"], 6))
        sessions.add(obj["session"])
    for alert in result.alerts:
        assert round(alert.timestamp, 6) in timestamps
        assert alert.session_id in sessions


def test_alerted_transactions_do_not_feed_metrics(tmp_path):
    # ten failed logins; five responses also carry an injected page, so only
    # the five clean misses may reach the fuzzy window
    lines = []
    for i in range(10):
        ts = i * 0.1
        lines.append(jsonl_entry(ts, "s", "req", request(b"/login")))
        body = (b"<img src='javascript:x()'>" if i % 2 == 0 else b"denied")
        lines.append(jsonl_entry(ts + 0.01, "s", "resp",
                                 response(body, status=b"401 Unauthorized")))
    capture = tmp_path / "mixed.jsonl"
    capture.write_text("\n".join(lines) + "\n")
    result = run_pipeline(config_for(capture))
    fuzzy = [a for a in result.alerts if a.source == "fuzzy" and a.id == "brute_force"]
    assert fuzzy, "clean misses should still feed the window"
    assert "login_failure: 5 events" in fuzzy[0].evidence


def test_payload_stage_can_be_disabled(tmp_path):
    page = tmp_path / "xss.raw"
    page.write_bytes(response(b"<img src='javascript:steal()'>"))
    result = run_pipeline(config_for(page, enable_payload=False, enable_fuzzy=False))
    assert result.alerts == []


def test_pipeline_is_deterministic():
    first = run_pipeline(config_for(CORPUS / "bruteforce.jsonl"))
    second = run_pipeline(config_for(CORPUS / "bruteforce.jsonl"))
    assert first.alerts == second.alerts
    assert first.summary() == second.summary()


def test_rejected_entries_are_isolated(tmp_path):
    capture = tmp_path / "mixed"
    capture.mkdir()
    (capture / "a_garbage.raw").write_bytes(b"\x00\x01\x02 nonsense\r\n\r\n")
    (capture / "b_ok.raw").write_bytes(request(b"/fine"))
    result = run_pipeline(config_for(capture))
    assert result.transactions == 1
    assert result.rejected_entries == 1


def test_alert_json_schema():
    alert = Alert(
        source="payload", id="sql-injection", severity=AlertSeverity.INTRUSIVE,
        session_id="s", timestamp=1.5, message="m", evidence="e",
    )
    record = json.loads(alert.to_json())
    assert set(record) == {"source", "id", "severity", "session_id",
                           "timestamp", "message", "evidence"}
    assert record["severity"] == "intrusive"


def test_write_alerts_to_file(tmp_path):
    alert = Alert("fuzzy", "brute_force", AlertSeverity.HP, "s", 2.0, "m", "e")
    out = tmp_path / "alerts.jsonl"
    text = write_alerts([alert], out)
    assert out.read_text() == text
    assert json.loads(text.splitlines()[0])["id"] == "brute_force"


def test_multi_metric_event_evaluated_at_flush(tmp_path):
    fuzzy_config = tmp_path / "fuzzy.yaml"
    fuzzy_config.write_text(
        "metrics:\n"
        "  login_failure:\n"
        "    x_bounds: [0, 50]\n    t_bounds: [0, 300]\n    window_seconds: 300\n"
        "    x_axis: reversed\n    t_axis: reversed\n"
        "    extract:\n      - kind: status\n        codes: [401, 403]\n"
        "  request_rate:\n"
        "    x_bounds: [0, 200]\n    t_bounds: [0, 60]\n    window_seconds: 60\n"
        "    x_axis: reversed\n    t_axis: reversed\n"
        "    extract:\n      - kind: request\n"
        "events:\n"
        "  coordinated:\n"
        "    edges:\n"
        "      - metric: login_failure\n        fam: bruteforce_dos\n"
        "      - metric: request_rate\n        fam: bruteforce_dos\n"
    )
    result = run_pipeline(config_for(CORPUS / "bruteforce.jsonl", fuzzy_path=fuzzy_config))
    assert [a.id for a in result.alerts if a.source == "fuzzy"] == ["coordinated"]


# ---------------------------------------------------------------------------
# corpus report
# ---------------------------------------------------------------------------

def test_bundled_corpus_report_rates():
    rows = corpus_report(CORPUS)
    by_name = {row.configuration: row for row in rows}
    assert set(by_name) == {"header", "header+payload", "header+payload+fuzzy"}

    header = by_name["header"]
    assert header.total_malicious == 6 and header.total_benign == 3
    assert header.detected == 1  # only the traversal request matches a rule
    both = by_name["header+payload"]
    assert both.detected == 5    # everything except the brute-force trace
    full = by_name["header+payload+fuzzy"]
    assert full.detected == 6
    assert full.detection_rate == 1.0

    for row in rows:
        assert row.false_alarms == 0
        assert row.false_positive_rate == 0.0
    assert (header.detection_rate <= both.detection_rate <= full.detection_rate)


def test_report_csv_shape():
    text = report_csv(corpus_report(CORPUS))
    lines = text.strip().splitlines()
    assert lines[0].startswith("configuration,")
    assert len(lines) == 4


def test_corpus_labels_diagnostics(tmp_path, caplog):
    corpus = tmp_path / "corpus"
    corpus.mkdir()
    (corpus / "present.raw").write_bytes(request(b"/x"))
    (corpus / "unlabeled.raw").write_bytes(request(b"/y"))
    (corpus / "labels.txt").write_text(
        "present.raw benign\n"
        "missing.raw malicious xss\n"
        "strange-entry\n"
    )
    with caplog.at_level("WARNING"):
        entries = read_corpus_labels(corpus)
    assert [e.path.name for e in entries] == ["present.raw"]
    messages = " | ".join(rec.message for rec in caplog.records)
    assert "missing" in messages
    assert "malformed" in messages
    assert "without a label" in messages


def test_corpus_report_requires_labels(tmp_path):
    with pytest.raises(ConfigError):
        corpus_report(tmp_path)


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def test_cli_run_clean_exit_zero(tmp_path, capsys):
    benign = tmp_path / "ok.raw"
    benign.write_bytes(request(b"/index.htm"))
    code = main(["run", "--input", str(benign), "--format", "raw"])
    assert code == 0
    assert capsys.readouterr().out == ""


def test_cli_run_alerts_exit_one(tmp_path, capsys):
    page = tmp_path / "xss.raw"
    page.write_bytes(response(b"<img src='javascript:steal()'>"))
    out = tmp_path / "alerts.jsonl"
    code = main(["run", "--input", str(page), "--format", "raw", "--out", str(out)])
    assert code == 1
    record = json.loads(out.read_text().splitlines()[0])
    assert record["source"] == "payload"


def test_cli_run_bad_config_exit_two(tmp_path, capsys):
    code = main(["run", "--input", str(tmp_path / "missing")])
    assert code == 2
    assert "configuration error" in capsys.readouterr().err


def test_cli_records_out_legacy_spelling(tmp_path):
    records_out = tmp_path / "records.txt"
    code = main([
        "run", "--input", str(CORPUS / "get_index.raw"), "--format", "raw",
        "--records-out", str(records_out), "--legacy-record-names",
    ])
    assert code == 0
    text = records_out.read_text()
    assert text.startswith("Request_Method$GET\n")
    assert "generic-header_Connection$Keep-Alive" in text


def test_cli_bench_objects_csv(tmp_path):
    out = tmp_path / "bench.csv"
    code = main(["bench", "objects", "--counts", "5,10", "--trials", "1",
                 "--out", str(out)])
    assert code == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "n_objects,trials,mean_response_s,median_response_s"
    assert len(lines) == 3
    first = lines[1].split(",")
    assert first[0] == "5"
    assert float(first[2]) >= 0.0


def test_cli_bench_payload_csv(tmp_path):
    out = tmp_path / "bench.csv"
    code = main(["bench", "payload", "--sizes", "1024,2048", "--trials", "1",
                 "--out", str(out)])
    assert code == 0
    lines = out.read_text().strip().splitlines()
    assert len(lines) == 3
    sizes = [int(line.split(",")[0]) for line in lines[1:]]
    assert sizes == [1024, 2048]


def test_cli_report(tmp_path):
    out = tmp_path / "report.csv"
    code = main(["report", "--corpus", str(CORPUS), "--out", str(out)])
    assert code == 0
    assert out.read_text().startswith("configuration,")

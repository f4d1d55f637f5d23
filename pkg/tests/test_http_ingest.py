"""Capture reading, transaction dispatch and header flattening."""

from __future__ import annotations

import base64
import json

import pytest

from fasids.http_ingest import (
    CaptureError,
    FieldRecord,
    MessageLine,
    RawCaptureEntry,
    Severity,
    dispatch,
    group_sessions,
    parse_header,
    read_capture,
    read_records,
    serialize_records,
)

SAMPLE_GET = (
    b"GET /index.htm HTTP/1.1\r\n"
    b"Accept: image/gif, image/x-xbitmap, image/jpeg, image/pjpeg, "
    b"application/x-shockwave-flash, application/vnd.ms-excel, "
    b"application/vnd.ms-powerpoint, application/msword, */*\r\n"
    b"Accept-Language: en-us\r\n"
    b"Accept-Encoding: gzip, deflate\r\n"
    b"User-Agent: Mozilla/4.0 (compatible; MSIE 7.0; Windows NT 5.1; SV1)\r\n"
    b"Host: 192.168.0.51:4556\r\n"
    b"Connection: Keep-Alive\r\n"
    b"\r\n"
)

SAMPLE_GET_LEGACY_TEXT = (
    "Request_Method$GET\n"
    "Request_Request-URI$/index.htm\n"
    "Request_HTTP-version$HTTP/1.1\n"
    "generic-header_Accept$image/gif, image/x-xbitmap, image/jpeg, image/pjpeg, "
    "application/x-shockwave-flash, application/vnd.ms-excel, "
    "application/vnd.ms-powerpoint, application/msword, */*\n"
    "generic-header_Accept-Language$en-us\n"
    "generic-header_Accept-Encoding$gzip, deflate\n"
    "generic-header_User-Agent$Mozilla/4.0 (compatible; MSIE 7.0; Windows NT 5.1; SV1)\n"
    "generic-header_Host$192.168.0.51:4556\n"
    "generic-header_Connection$Keep-Alive\n"
)


def entry(data: bytes, direction: str = "req", session: str = "s1", ts: float = 0.0):
    return RawCaptureEntry(timestamp=ts, direction=direction, session_id=session, data=data)


def jsonl_line(ts, session, direction, data: bytes) -> str:
    return json.dumps(
        {"ts": ts, "session": session, "dir": direction,
         "data_b64": base64.b64encode(data).decode("ascii")}
    )


# ---------------------------------------------------------------------------
# read_capture
# ---------------------------------------------------------------------------

def test_read_capture_empty_file_yields_nothing(tmp_path):
    capture = tmp_path / "empty.jsonl"
    capture.write_text("")
    assert read_capture(capture, format="jsonl") == []


def test_read_capture_single_raw_request(tmp_path):
    (tmp_path / "get_index.raw").write_bytes(SAMPLE_GET)
    entries = read_capture(tmp_path, format="raw")
    assert len(entries) == 1
    assert entries[0].direction == "req"
    sessions = group_sessions(entries)
    assert list(sessions) == ["get_index"]


def test_read_capture_request_precedes_response(tmp_path):
    capture = tmp_path / "pair.jsonl"
    capture.write_text(
        jsonl_line(1.0, "s1", "req", b"GET / HTTP/1.1\r\n\r\n") + "\n"
        + jsonl_line(2.0, "s1", "resp", b"HTTP/1.1 200 OK\r\n\r\n") + "\n"
    )
    entries = read_capture(capture, format="jsonl")
    assert [e.direction for e in entries] == ["req", "resp"]


def test_read_capture_sorts_by_timestamp(tmp_path):
    capture = tmp_path / "scrambled.jsonl"
    capture.write_text(
        jsonl_line(5.0, "s1", "resp", b"HTTP/1.1 200 OK\r\n\r\n") + "\n"
        + jsonl_line(1.0, "s1", "req", b"GET / HTTP/1.1\r\n\r\n") + "\n"
    )
    entries = read_capture(capture, format="jsonl")
    assert [e.timestamp for e in entries] == [1.0, 5.0]


def test_read_capture_skips_malformed_jsonl(tmp_path, caplog):
    capture = tmp_path / "bad.jsonl"
    capture.write_text("not json\n" + jsonl_line(0.0, "s", "req", b"GET / HTTP/1.1\r\n\r\n") + "\n")
    with caplog.at_level("WARNING"):
        entries = read_capture(capture, format="jsonl")
    assert len(entries) == 1
    assert any("malformed" in rec.message for rec in caplog.records)


def test_read_capture_warns_on_orphan_response(tmp_path, caplog):
    capture = tmp_path / "orphan.jsonl"
    capture.write_text(jsonl_line(0.0, "s1", "resp", b"HTTP/1.1 200 OK\r\n\r\n") + "\n")
    with caplog.at_level("WARNING"):
        entries = read_capture(capture, format="jsonl")
    assert len(entries) == 1
    assert any("precedes" in rec.message for rec in caplog.records)


def test_read_capture_rejects_unknown_format(tmp_path):
    capture = tmp_path / "x.jsonl"
    capture.write_text("")
    with pytest.raises(CaptureError):
        read_capture(capture, format="pcap")


def test_read_capture_rejects_missing_source(tmp_path):
    with pytest.raises(CaptureError):
        read_capture(tmp_path / "nope", format="raw")


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def test_dispatch_content_length_zero_gives_empty_body():
    txn, violations = dispatch(entry(b"POST /x HTTP/1.1\r\nContent-Length: 0\r\n\r\nleftover"))
    assert txn is not None
    assert txn.body == b""
    assert violations == []


def test_dispatch_sample_get_shape():
    txn, violations = dispatch(entry(SAMPLE_GET))
    assert txn is not None
    assert txn.kind == "request"
    assert txn.start_line == "GET /index.htm HTTP/1.1"
    assert len(txn.headers) == 6
    assert txn.body == b""
    assert violations == []


def test_dispatch_captures_gzip_encoding():
    raw = b"HTTP/1.1 200 OK\r\nContent-Encoding: gzip\r\n\r\nGZDATA"
    txn, _ = dispatch(entry(raw, direction="resp"))
    assert txn is not None
    assert txn.content_encoding == "gzip"
    assert txn.body == b"GZDATA"


def test_dispatch_truncates_to_content_length():
    raw = b"HTTP/1.1 200 OK\r\nContent-Length: 4\r\n\r\nabcdefgh"
    txn, _ = dispatch(entry(raw, direction="resp"))
    assert txn is not None
    assert txn.body == b"abcd"


def test_dispatch_missing_blank_line_means_empty_body():
    txn, _ = dispatch(entry(b"GET / HTTP/1.1\r\nHost: a\r\n"))
    assert txn is not None
    assert txn.body == b""
    assert txn.header_values("Host") == ["a"]


def test_dispatch_rejects_garbage_start_line():
    txn, violations = dispatch(entry(b"\x00\x01\x02 nonsense"))
    assert txn is None
    assert violations and violations[0].severity is Severity.REJECT


def test_dispatch_warns_on_missing_colon():
    txn, violations = dispatch(entry(b"GET / HTTP/1.1\r\nBadHeaderLine\r\nHost: a\r\n\r\n"))
    assert txn is not None
    assert len(txn.headers) == 1
    assert any(v.severity is Severity.WARN for v in violations)


def test_dispatch_joins_folded_header_values():
    raw = (
        b"GET / HTTP/1.1\r\n"
        b"Accept: image/gif,\r\n image/jpeg\r\n"
        b"\r\n"
    )
    txn, _ = dispatch(entry(raw))
    assert txn is not None
    assert txn.header_values("Accept") == ["image/gif, image/jpeg"]


# ---------------------------------------------------------------------------
# parse_header
# ---------------------------------------------------------------------------

def test_parse_header_request_line_components():
    txn, _ = dispatch(entry(b"GET /index.htm HTTP/1.1\r\n\r\n"))
    records, violations = parse_header(txn)
    assert records == [
        FieldRecord(MessageLine.REQUEST_LINE, "Method", "GET"),
        FieldRecord(MessageLine.REQUEST_LINE, "Request-URI", "/index.htm"),
        FieldRecord(MessageLine.REQUEST_LINE, "HTTP-version", "HTTP/1.1"),
    ]
    assert violations == []


def test_parse_header_status_line_components():
    txn, _ = dispatch(entry(b"HTTP/1.1 404 Not Found\r\n\r\n", direction="resp"))
    records, _ = parse_header(txn)
    assert records == [
        FieldRecord(MessageLine.STATUS_LINE, "HTTP-version", "HTTP/1.1"),
        FieldRecord(MessageLine.STATUS_LINE, "Status-code", "404"),
        FieldRecord(MessageLine.STATUS_LINE, "Reason", "Not Found"),
    ]


def test_parse_header_host_is_generic():
    txn, _ = dispatch(entry(b"GET / HTTP/1.1\r\nHost: 192.168.0.51:4556\r\n\r\n"))
    records, violations = parse_header(txn)
    assert FieldRecord(MessageLine.GENERIC_HEADER, "Host", "192.168.0.51:4556") in records
    assert violations == []


def test_parse_header_classifies_response_and_entity_headers():
    raw = b"HTTP/1.1 200 OK\r\nServer: nginx\r\nContent-Type: text/html\r\n\r\n"
    txn, _ = dispatch(entry(raw, direction="resp"))
    records, _ = parse_header(txn)
    classes = {r.section: r.message_line for r in records}
    assert classes["Server"] is MessageLine.RESPONSE_HEADER
    assert classes["Content-Type"] is MessageLine.ENTITY_HEADER


def test_parse_header_unknown_header_warns_but_keeps_record():
    txn, _ = dispatch(entry(b"GET / HTTP/1.1\r\nX-Custom: v\r\n\r\n"))
    records, violations = parse_header(txn)
    assert FieldRecord(MessageLine.GENERIC_HEADER, "X-Custom", "v") in records
    assert any("X-Custom" in v.description for v in violations)


def test_parse_header_sample_get_has_nine_records():
    txn, _ = dispatch(entry(SAMPLE_GET))
    records, violations = parse_header(txn)
    assert len(records) == 9
    assert violations == []
    assert sum(r.message_line is MessageLine.GENERIC_HEADER for r in records) == 6


def test_body_never_leaks_into_records():
    raw = b"POST /login HTTP/1.1\r\nHost: a\r\nContent-Length: 9\r\n\r\nSECRETPAY"
    txn, _ = dispatch(entry(raw))
    records, _ = parse_header(txn)
    assert all("SECRETPAY" not in r.value for r in records)


# ---------------------------------------------------------------------------
# record serialization
# ---------------------------------------------------------------------------

def test_serialize_connection_header():
    rec = FieldRecord(MessageLine.GENERIC_HEADER, "Connection", "Keep-Alive")
    assert rec.serialize() == "generic-header_Connection$Keep-Alive"


def test_serialize_empty_list_is_empty_text():
    assert serialize_records([]) == ""


def test_serialize_method_legacy_spelling():
    rec = FieldRecord(MessageLine.REQUEST_LINE, "Method", "GET")
    assert rec.serialize(legacy_names=True) == "Request_Method$GET"
    assert rec.serialize() == "request-line_Method$GET"


def test_sample_get_legacy_serialization_is_exact():
    txn, _ = dispatch(entry(SAMPLE_GET))
    records, _ = parse_header(txn)
    assert serialize_records(records, legacy_names=True) == SAMPLE_GET_LEGACY_TEXT


@pytest.mark.parametrize("legacy", [False, True])
def test_round_trip_through_record_reader(legacy):
    txn, _ = dispatch(entry(SAMPLE_GET))
    records, _ = parse_header(txn)
    text = serialize_records(records, legacy_names=legacy)
    assert read_records(text) == records


def test_read_records_rejects_garbage():
    with pytest.raises(ValueError):
        read_records("no delimiter here\n")
    with pytest.raises(ValueError):
        read_records("unknown-line_Section$v\n")


def _bundled_corpus_entries():
    from fasids.pipeline import data_path

    corpus = data_path("corpus")
    for path in sorted(corpus.iterdir()):
        if path.name == "labels.txt":
            continue
        fmt = "jsonl" if path.suffix == ".jsonl" else "raw"
        yield from read_capture(path, fmt)


@pytest.mark.parametrize("legacy", [False, True])
def test_round_trip_holds_across_bundled_corpus(legacy):
    count = 0
    for capture_entry in _bundled_corpus_entries():
        txn, _ = dispatch(capture_entry)
        assert txn is not None
        records, _ = parse_header(txn)
        assert read_records(serialize_records(records, legacy_names=legacy)) == records
        count += 1
    assert count > 60  # the brute-force trace alone holds 60 transactions


def test_record_values_come_from_the_head_section_only():
    for capture_entry in _bundled_corpus_entries():
        head = capture_entry.data.split(b"\r\n\r\n", 1)[0]
        txn, _ = dispatch(capture_entry)
        records, _ = parse_header(txn)
        for rec in records:
            assert rec.value.encode("utf-8") in head

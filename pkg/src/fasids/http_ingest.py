"""HTTP capture ingestion: reconstruct transactions and flatten headers to field records.

Two capture formats are supported:

* ``raw``   -- a file, or a directory of files, each holding one HTTP message
  (CRLF or LF line endings, body after the first blank line).
* ``jsonl`` -- one JSON object per line with fields ``ts`` (float seconds),
  ``session`` (string), ``dir`` (``"req"`` or ``"resp"``) and ``data_b64``
  (base64-encoded message octets).

Parsed transactions are flattened into field records serialized as
``<message_line>_<section>$<value>``, one record per line.
"""

from __future__ import annotations

import base64
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

logger = logging.getLogger(__name__)

DELIMITER = "$"


class MessageLine(str, Enum):
    """Protocol position a field record was extracted from."""

    REQUEST_LINE = "request-line"
    STATUS_LINE = "status-line"
    GENERIC_HEADER = "generic-header"
    REQUEST_HEADER = "request-header"
    RESPONSE_HEADER = "response-header"
    ENTITY_HEADER = "entity-header"
    BODY = "body"

    def __str__(self) -> str:  # pragma: no cover - cosmetic
        return self.value


# Compatibility spelling used by the legacy record-text flavour. Only the
# start lines are renamed; header classes serialize identically in both modes.
_LEGACY_NAMES = {
    MessageLine.REQUEST_LINE: "Request",
    MessageLine.STATUS_LINE: "Response",
}
_LEGACY_REVERSE = {v: k for k, v in _LEGACY_NAMES.items()}


class Severity(str, Enum):
    WARN = "warn"
    REJECT = "reject"


@dataclass(frozen=True)
class SpecViolation:
    """A deviation from the HTTP message grammar found while parsing."""

    location: str
    description: str
    severity: Severity = Severity.WARN


@dataclass(frozen=True)
class FieldRecord:
    """One (message-line, section, value) triple extracted from a transaction."""

    message_line: MessageLine
    section: str
    value: str

    def serialize(self, legacy_names: bool = False) -> str:
        name = self.message_line.value
        if legacy_names and self.message_line in _LEGACY_NAMES:
            name = _LEGACY_NAMES[self.message_line]
        return f"{name}_{self.section}{DELIMITER}{self.value}"


@dataclass(frozen=True)
class RawCaptureEntry:
    """One captured message: timestamp, direction, session and raw octets."""

    timestamp: float
    direction: str  # "req" | "resp"
    session_id: str
    data: bytes


@dataclass(frozen=True)
class HttpTransaction:
    """A reconstructed HTTP request or response."""

    session_id: str
    kind: str  # "request" | "response"
    start_line: str
    headers: tuple[tuple[str, str], ...]
    body: bytes = b""
    content_encoding: str = "identity"
    timestamp: float = 0.0

    def header_values(self, name: str) -> list[str]:
        name = name.lower()
        return [v for n, v in self.headers if n.lower() == name]


class CaptureError(Exception):
    """Raised when a capture source cannot be read at all."""


# RFC 2616 header taxonomy. Request-header fields are deliberately folded
# into the generic class: the record format targets them as generic-header
# and rules address them the same way (see the bundled rule file).
_GENERAL_FIELDS = {
    "cache-control", "connection", "date", "pragma", "trailer",
    "transfer-encoding", "upgrade", "via", "warning",
}
_REQUEST_FIELDS = {
    "accept", "accept-charset", "accept-encoding", "accept-language",
    "authorization", "expect", "from", "host", "if-match",
    "if-modified-since", "if-none-match", "if-range", "if-unmodified-since",
    "max-forwards", "proxy-authorization", "range", "referer", "te",
    "user-agent",
}
_RESPONSE_FIELDS = {
    "accept-ranges", "age", "etag", "location", "proxy-authenticate",
    "retry-after", "server", "vary", "www-authenticate",
}
_ENTITY_FIELDS = {
    "allow", "content-encoding", "content-language", "content-length",
    "content-location", "content-md5", "content-range", "content-type",
    "expires", "last-modified",
}

# Fields where repetition within one message is itself suspicious.
_SINGLETON_FIELDS = {"host", "content-length", "content-type"}


def classify_header(name: str) -> tuple[MessageLine, bool]:
    """Map a header field name to its record class.

    Returns ``(message_line, known)``; unknown fields land in the generic
    class so rules can still target them by name.
    """
    key = name.lower()
    if key in _GENERAL_FIELDS or key in _REQUEST_FIELDS:
        return MessageLine.GENERIC_HEADER, True
    if key in _RESPONSE_FIELDS:
        return MessageLine.RESPONSE_HEADER, True
    if key in _ENTITY_FIELDS:
        return MessageLine.ENTITY_HEADER, True
    return MessageLine.GENERIC_HEADER, False


def _decode(raw: bytes) -> str:
    return raw.decode("utf-8", errors="replace")


# ---------------------------------------------------------------------------
# Capture reading
# ---------------------------------------------------------------------------

def _sniff_direction(data: bytes) -> str:
    return "resp" if data.lstrip()[:5] == b"HTTP/" else "req"


def _read_raw_entries(path: Path) -> list[RawCaptureEntry]:
    files = sorted(p for p in path.iterdir() if p.is_file()) if path.is_dir() else [path]
    entries = []
    for index, file in enumerate(files):
        data = file.read_bytes()
        if not data.strip():
            continue
        entries.append(
            RawCaptureEntry(
                timestamp=float(index),
                direction=_sniff_direction(data),
                session_id=file.stem,
                data=data,
            )
        )
    return entries


def _read_jsonl_entries(path: Path) -> list[RawCaptureEntry]:
    entries = []
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                entries.append(
                    RawCaptureEntry(
                        timestamp=float(obj["ts"]),
                        direction=str(obj["dir"]),
                        session_id=str(obj["session"]),
                        data=base64.b64decode(obj["data_b64"]),
                    )
                )
            except (ValueError, KeyError, TypeError) as exc:
                logger.warning("%s:%d: skipping malformed capture entry: %s", path, lineno, exc)
    return entries


def read_capture(source: str | Path, format: str = "raw") -> list[RawCaptureEntry]:
    """Read a capture into entries ordered by timestamp (stable per session).

    Malformed entries are skipped with a diagnostic; an unreadable source or
    an unknown format tag raises :class:`CaptureError`.
    """
    path = Path(source)
    if not path.exists():
        raise CaptureError(f"capture source not found: {path}")
    if format == "raw":
        entries = _read_raw_entries(path)
    elif format == "jsonl":
        if path.is_dir():
            raise CaptureError(f"jsonl capture must be a file: {path}")
        entries = _read_jsonl_entries(path)
    else:
        raise CaptureError(f"unknown capture format: {format!r}")

    entries.sort(key=lambda e: e.timestamp)
    seen_request: set[str] = set()
    for entry in entries:
        if entry.direction == "req":
            seen_request.add(entry.session_id)
        elif entry.session_id not in seen_request:
            logger.warning(
                "session %s: response at t=%.3f precedes any request; keeping entry",
                entry.session_id, entry.timestamp,
            )
    return entries


def group_sessions(entries: list[RawCaptureEntry]) -> dict[str, list[RawCaptureEntry]]:
    sessions: dict[str, list[RawCaptureEntry]] = {}
    for entry in entries:
        sessions.setdefault(entry.session_id, []).append(entry)
    return sessions


# ---------------------------------------------------------------------------
# Dispatch: split an entry into start line, headers and body
# ---------------------------------------------------------------------------

def _split_lines(head: bytes) -> list[str]:
    text = _decode(head)
    lines: list[str] = []
    for line in text.split("\n"):
        line = line.rstrip("\r")
        if not line:
            continue
        if line[0] in " \t" and lines:
            # obs-fold continuation: joined onto the previous header value
            lines[-1] += " " + line.strip()
        else:
            lines.append(line)
    return lines


def dispatch(entry: RawCaptureEntry) -> tuple[HttpTransaction | None, list[SpecViolation]]:
    """Split one captured message into an :class:`HttpTransaction`.

    Returns ``(None, [reject violation])`` when the start line is not
    plausible HTTP; header anomalies are reported as warnings.
    """
    violations: list[SpecViolation] = []
    data = entry.data
    for sep in (b"\r\n\r\n", b"\n\n"):
        if sep in data:
            head, body = data.split(sep, 1)
            break
    else:
        head, body = data, b""

    lines = _split_lines(head)
    if not lines:
        return None, [SpecViolation("line 1", "empty message", Severity.REJECT)]
    start_line = lines[0].strip()

    kind = "response" if entry.direction == "resp" else "request"
    parts = start_line.split()
    if kind == "request":
        plausible = len(parts) == 3 and parts[2].startswith("HTTP/")
    else:
        plausible = len(parts) >= 2 and parts[0].startswith("HTTP/")
    if not plausible:
        return None, [
            SpecViolation("line 1", f"unparseable start line: {start_line!r}", Severity.REJECT)
        ]

    headers: list[tuple[str, str]] = []
    seen: dict[str, int] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        name, colon, value = line.partition(":")
        if not colon or not name.strip():
            violations.append(
                SpecViolation(f"line {lineno}", f"header line without ':': {line!r}")
            )
            continue
        name = name.strip()
        headers.append((name, value.strip()))
        key = name.lower()
        seen[key] = seen.get(key, 0) + 1
        if key in _SINGLETON_FIELDS and seen[key] == 2:
            violations.append(
                SpecViolation(f"line {lineno}", f"repeated singleton header: {name}")
            )

    content_encoding = "identity"
    header_map = {n.lower(): v for n, v in headers}
    if "gzip" in header_map.get("content-encoding", "").lower():
        content_encoding = "gzip"
    if "content-length" in header_map:
        try:
            declared = int(header_map["content-length"])
            if declared < len(body):
                body = body[:declared]
        except ValueError:
            violations.append(
                SpecViolation("header", f"non-numeric Content-Length: {header_map['content-length']!r}")
            )

    txn = HttpTransaction(
        session_id=entry.session_id,
        kind=kind,
        start_line=start_line,
        headers=tuple(headers),
        body=body,
        content_encoding=content_encoding,
        timestamp=entry.timestamp,
    )
    return txn, violations


# ---------------------------------------------------------------------------
# Header flattening
# ---------------------------------------------------------------------------

def parse_header(txn: HttpTransaction) -> tuple[list[FieldRecord], list[SpecViolation]]:
    """Flatten a transaction's start line and headers into field records.

    Start lines expand to one record per component; header fields yield one
    record each, in wire order. No body byte ever enters a record value.
    """
    records: list[FieldRecord] = []
    violations: list[SpecViolation] = []
    parts = txn.start_line.split(None, 2)

    if txn.kind == "request":
        components = ("Method", "Request-URI", "HTTP-version")
        line_class = MessageLine.REQUEST_LINE
    else:
        components = ("HTTP-version", "Status-code", "Reason")
        line_class = MessageLine.STATUS_LINE
    for section, value in zip(components, parts):
        records.append(FieldRecord(line_class, section, value))
    if len(parts) < len(components):
        violations.append(
            SpecViolation("line 1", f"start line has {len(parts)} of {len(components)} components")
        )

    for name, value in txn.headers:
        line_class, known = classify_header(name)
        if not known:
            violations.append(SpecViolation(f"header {name}", f"unknown header field: {name}"))
        records.append(FieldRecord(line_class, name, value))
    return records, violations


def serialize_records(records: list[FieldRecord], legacy_names: bool = False) -> str:
    """Render records one per line; the legacy flag switches start-line spelling."""
    if not records:
        return ""
    return "\n".join(r.serialize(legacy_names=legacy_names) for r in records) + "\n"


def read_records(text: str) -> list[FieldRecord]:
    """Parse record text back into field records (inverse of serialization)."""
    records: list[FieldRecord] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line:
            continue
        prefix, delim, value = line.partition(DELIMITER)
        name, underscore, section = prefix.partition("_")
        if not delim or not underscore or not section:
            raise ValueError(f"line {lineno}: not a field record: {line!r}")
        if name in _LEGACY_REVERSE:
            message_line = _LEGACY_REVERSE[name]
        else:
            try:
                message_line = MessageLine(name)
            except ValueError as exc:
                raise ValueError(f"line {lineno}: unknown message-line {name!r}") from exc
        records.append(FieldRecord(message_line, section, value))
    return records

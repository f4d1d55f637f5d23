"""HTML payload scanning: script-injection signatures and script heuristics.

The scanner inflates gzip bodies (with a decompression-bomb cap), walks the
markup with an error-tolerant tag tokenizer, flags ``javascript:`` URLs in
the signature table's tag/attribute slots, and pulls script sources out of
``<script>`` elements, ``on*`` handlers and ``javascript:`` URLs for
SQL-injection and runaway-loop checks. Image payloads are skipped outright.
"""

from __future__ import annotations

import gzip
import logging
import re
import zlib
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

logger = logging.getLogger(__name__)

DEFAULT_DECOMPRESS_CAP = 16 * 1024 * 1024
DEFAULT_LOOP_BOUND = 10_000
EVIDENCE_LIMIT = 256

# Control and whitespace bytes that browsers ignore inside a URL scheme.
_SCHEME_NOISE = re.compile(r"[\x00-\x20\x7f]")

_IMAGE_MAGIC = (
    b"\xff\xd8\xff",      # JPEG
    b"\x89PNG\r\n\x1a\n",  # PNG
    b"GIF87a",
    b"GIF89a",
    b"BM",                # BMP
    b"RIFF",              # WEBP container
)

_TAG_RE = re.compile(rb"<([a-zA-Z][a-zA-Z0-9-]*)((?:[^>\"']|\"[^\"]*\"|'[^']*')*)>")
_ATTR_RE = re.compile(
    rb"([a-zA-Z_][a-zA-Z0-9_:.-]*)(\s*=\s*(\"([^\"]*)\"|'([^']*)'|([^\s\"'>]+)))?")
_SCRIPT_BODY_RE = re.compile(rb"<script\b[^>]*>(.*?)</script", re.IGNORECASE | re.DOTALL)


class AlertKind(str, Enum):
    TAG_ATTRIBUTE_INJECTION = "tag-attribute-injection"
    SQL_INJECTION = "sql-injection"
    DOS_LOOP = "dos-loop"
    SUSPICIOUS_SCRIPT = "suspicious-script"


class ScriptOrigin(str, Enum):
    SCRIPT_ELEMENT = "script-element"
    EVENT_ATTRIBUTE = "event-attribute"
    JAVASCRIPT_URL = "javascript-url"


@dataclass(frozen=True)
class TagEvent:
    """One markup tag with its attributes and byte position."""

    tag: str
    attributes: tuple[tuple[str, str], ...]
    byte_offset: int
    raw: str = ""
    value_offsets: tuple[int, ...] = ()

    def attribute(self, name: str) -> str | None:
        for attr_name, value in self.attributes:
            if attr_name == name:
                return value
        return None

    def value_offset(self, name: str) -> int:
        for (attr_name, _), offset in zip(self.attributes, self.value_offsets):
            if attr_name == name:
                return offset
        return self.byte_offset


@dataclass(frozen=True)
class ScriptBlock:
    source: str
    origin: ScriptOrigin
    byte_offset: int


@dataclass(frozen=True)
class PayloadAlert:
    kind: AlertKind
    evidence: str
    byte_offset: int
    detail: str = ""


@dataclass(frozen=True)
class DecompressResult:
    data: bytes
    truncated: bool = False
    error: str | None = None


@dataclass(frozen=True)
class SignatureTable:
    """(tag, attribute) slots where a ``javascript:`` value raises an alert."""

    entries: tuple[tuple[str, str, str], ...]

    @classmethod
    def default(cls) -> "SignatureTable":
        return cls(entries=tuple((t, a, "javascript-url") for t, a in _DEFAULT_PAIRS))

    @classmethod
    def from_text(cls, text: str) -> "SignatureTable":
        entries = []
        for lineno, raw_line in enumerate(text.splitlines(), start=1):
            line = raw_line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            if len(fields) == 2:
                tag, attribute = fields
                predicate = "javascript-url"
            elif len(fields) == 3 and fields[2].startswith("predicate="):
                tag, attribute = fields[:2]
                predicate = fields[2].split("=", 1)[1]
            else:
                raise ValueError(f"line {lineno}: expected 'tag attribute [predicate=...]'")
            if predicate != "javascript-url":
                raise ValueError(f"line {lineno}: unknown predicate {predicate!r}")
            entries.append((tag.lower(), attribute.lower(), predicate))
        return cls(entries=tuple(entries))

    @classmethod
    def from_file(cls, path) -> "SignatureTable":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def pairs(self) -> set[tuple[str, str]]:
        return {(t, a) for t, a, _ in self.entries}


# The delivery slots for javascript: URLs. `anchor` is kept verbatim
# alongside the `a` element it names, so markup using either spelling is
# covered (13 slots).
_DEFAULT_PAIRS = (
    ("img", "src"),
    ("a", "href"),
    ("anchor", "href"),
    ("input", "type"),
    ("meta", "name"),
    ("meta", "content"),
    ("div", "align"),
    ("div", "class"),
    ("body", "bgcolor"),
    ("body", "background"),
    ("body", "leftmargin"),
    ("iframe", "align"),
    ("iframe", "src"),
)


@dataclass(frozen=True)
class ScriptScanConfig:
    """Pattern sets for script-level checks; regexes are case-insensitive."""

    sql_patterns: tuple[str, ...] = (
        r"'\s*(?:or|and)\b",
        r"\bunion\s+select\b",
        r"'\s*--",
        r";\s*(?:drop|insert|update|delete)\b",
    )
    dos_patterns: tuple[str, ...] = (
        r"\bwhile\s*\(\s*(?:true|1)\s*\)",
        r"\bfor\s*\(\s*;\s*;\s*\)",
    )
    extra_patterns: tuple[tuple[AlertKind, str], ...] = ()
    loop_bound_threshold: int = DEFAULT_LOOP_BOUND

    @classmethod
    def from_file(cls, path) -> "ScriptScanConfig":
        """Load `<kind> <regex>` lines; kinds extend or replace the defaults."""
        sql: list[str] = []
        dos: list[str] = []
        extra: list[tuple[AlertKind, str]] = []
        for lineno, raw_line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = raw_line.strip()
            if not line or line.startswith("#"):
                continue
            kind_token, _, pattern = line.partition(" ")
            pattern = pattern.strip()
            try:
                kind = AlertKind(kind_token)
                re.compile(pattern)
            except (ValueError, re.error) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            if kind is AlertKind.SQL_INJECTION:
                sql.append(pattern)
            elif kind is AlertKind.DOS_LOOP:
                dos.append(pattern)
            else:
                extra.append((kind, pattern))
        return cls(
            sql_patterns=tuple(sql) or cls.sql_patterns,
            dos_patterns=tuple(dos) or cls.dos_patterns,
            extra_patterns=tuple(extra),
        )


# ---------------------------------------------------------------------------
# decompression
# ---------------------------------------------------------------------------

def decompress_if_needed(body: bytes, encoding: str,
                         max_size: int = DEFAULT_DECOMPRESS_CAP) -> DecompressResult:
    """Inflate gzip bodies up to ``max_size`` bytes; identity passes through."""
    if encoding != "gzip":
        return DecompressResult(data=body)
    decompressor = zlib.decompressobj(wbits=zlib.MAX_WBITS | 16)
    try:
        data = decompressor.decompress(body, max_size)
    except zlib.error as exc:
        logger.warning("corrupt gzip payload skipped: %s", exc)
        return DecompressResult(data=b"", error=str(exc))
    if decompressor.unconsumed_tail:
        logger.warning("gzip payload exceeded %d bytes; truncated", max_size)
        return DecompressResult(data=data, truncated=True)
    return DecompressResult(data=data)


def gzip_bytes(data: bytes) -> bytes:
    """Helper used by fixtures and benches to build gzip bodies."""
    return gzip.compress(data)


# ---------------------------------------------------------------------------
# tokenizing
# ---------------------------------------------------------------------------

def looks_like_image(body: bytes) -> bool:
    return body.startswith(_IMAGE_MAGIC)


def tokenize_html(body: bytes) -> list[TagEvent]:
    """Error-tolerant tag scan over arbitrary bytes.

    Case-folds tags and attribute names, tolerates unquoted and single or
    double quoted values, drops text nodes, and skips image payloads
    entirely. Duplicate attribute names keep the first value.
    """
    if looks_like_image(body):
        return []
    events: list[TagEvent] = []
    for match in _TAG_RE.finditer(body):
        tag = match.group(1).decode("ascii").lower()
        raw = body[match.start():match.end()].decode("utf-8", errors="replace")
        attrs: list[tuple[str, str]] = []
        offsets: list[int] = []
        seen: set[str] = set()
        attr_base = match.start(2)
        for attr_match in _ATTR_RE.finditer(match.group(2)):
            name = attr_match.group(1).decode("utf-8", errors="replace").lower()
            for group in (4, 5, 6):
                if attr_match.group(group) is not None:
                    value = attr_match.group(group).decode("utf-8", errors="replace")
                    value_offset = attr_base + attr_match.start(group)
                    break
            else:
                value = ""
                value_offset = attr_base + attr_match.start(1)
            if name in seen:
                logger.debug("duplicate attribute %r on <%s> at %d ignored",
                             name, tag, match.start())
                continue
            seen.add(name)
            attrs.append((name, value))
            offsets.append(value_offset)
        events.append(TagEvent(
            tag=tag,
            attributes=tuple(attrs),
            byte_offset=match.start(),
            raw=raw,
            value_offsets=tuple(offsets),
        ))
    tail = body.rfind(b"<")
    if tail != -1 and b">" not in body[tail:] and re.match(rb"<[a-zA-Z]", body[tail:]):
        logger.debug("unterminated tag at byte %d dropped", tail)
    return events


def normalized_scheme_value(value: str) -> str:
    """Strip scheme-noise characters and case-fold, defeating obfuscation."""
    return _SCHEME_NOISE.sub("", value).lower()


def is_javascript_url(value: str) -> bool:
    return normalized_scheme_value(value).startswith("javascript:")


# ---------------------------------------------------------------------------
# scanning
# ---------------------------------------------------------------------------

def scan_tag_attributes(events: list[TagEvent], table: SignatureTable) -> list[PayloadAlert]:
    """Raise an alert for every signature slot carrying a ``javascript:`` value."""
    pairs = table.pairs()
    alerts: list[PayloadAlert] = []
    for event in events:
        for name, value in event.attributes:
            if (event.tag, name) in pairs and is_javascript_url(value):
                alerts.append(PayloadAlert(
                    kind=AlertKind.TAG_ATTRIBUTE_INJECTION,
                    evidence=event.raw[:EVIDENCE_LIMIT],
                    byte_offset=event.byte_offset,
                    detail=f"{event.tag}/{name}",
                ))
    return alerts


def extract_scripts(body: bytes, events: list[TagEvent]) -> list[ScriptBlock]:
    """Collect script sources: element bodies, on* handlers, javascript: URLs."""
    blocks: list[ScriptBlock] = []
    if looks_like_image(body):
        return blocks
    for match in _SCRIPT_BODY_RE.finditer(body):
        source = match.group(1).decode("utf-8", errors="replace")
        if source.strip():
            blocks.append(ScriptBlock(source, ScriptOrigin.SCRIPT_ELEMENT, match.start(1)))
    for event in events:
        for name, value in event.attributes:
            if not value:
                continue
            if name.startswith("on"):
                blocks.append(ScriptBlock(
                    value, ScriptOrigin.EVENT_ATTRIBUTE, event.value_offset(name)))
            elif is_javascript_url(value):
                blocks.append(ScriptBlock(
                    value, ScriptOrigin.JAVASCRIPT_URL, event.value_offset(name)))
    blocks.sort(key=lambda b: b.byte_offset)
    return blocks


_LOOP_BOUND_RE = re.compile(r"\b(?:for|while)\s*\([^)]*?[<>]=?\s*(\d+)")


def scan_script(block: ScriptBlock,
                config: ScriptScanConfig | None = None) -> list[PayloadAlert]:
    """Check one script source against the SQLi and loop pattern sets."""
    config = config or ScriptScanConfig()
    alerts: list[PayloadAlert] = []

    def add(kind: AlertKind, start: int, detail: str) -> None:
        prefix_bytes = len(block.source[:start].encode("utf-8", errors="replace"))
        alerts.append(PayloadAlert(
            kind=kind,
            evidence=block.source[start:start + EVIDENCE_LIMIT],
            byte_offset=block.byte_offset + prefix_bytes,
            detail=detail,
        ))

    for pattern in config.sql_patterns:
        match = re.search(pattern, block.source, re.IGNORECASE)
        if match:
            add(AlertKind.SQL_INJECTION, match.start(), pattern)
    for pattern in config.dos_patterns:
        match = re.search(pattern, block.source, re.IGNORECASE)
        if match:
            add(AlertKind.DOS_LOOP, match.start(), pattern)
    for match in _LOOP_BOUND_RE.finditer(block.source):
        if int(match.group(1)) >= config.loop_bound_threshold:
            add(AlertKind.DOS_LOOP, match.start(),
                f"loop bound {match.group(1)} >= {config.loop_bound_threshold}")
    for kind, pattern in config.extra_patterns:
        match = re.search(pattern, block.source, re.IGNORECASE)
        if match:
            add(kind, match.start(), pattern)
    return alerts


def scan_payload(body: bytes, encoding: str = "identity",
                 table: SignatureTable | None = None,
                 config: ScriptScanConfig | None = None,
                 max_size: int = DEFAULT_DECOMPRESS_CAP) -> list[PayloadAlert]:
    """Full payload pass: decompress, tokenize, signature scan, script scan."""
    table = table or SignatureTable.default()
    result = decompress_if_needed(body, encoding, max_size=max_size)
    if not result.data:
        return []
    events = tokenize_html(result.data)
    alerts = scan_tag_attributes(events, table)
    for block in extract_scripts(result.data, events):
        alerts.extend(scan_script(block, config))
    alerts.sort(key=lambda a: a.byte_offset)
    return alerts

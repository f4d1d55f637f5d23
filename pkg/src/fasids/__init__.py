"""fasids: application-layer HTTP misuse detection.

Captured HTTP traffic is parsed into field records and checked against a
rule-base of five-tuple match objects; payloads are scanned for script
injection signatures; transactions that miss both stages feed frequency
metrics into a fuzzy inference stage that flags brute-force and DoS style
behaviour.
"""

__version__ = "0.1.0"

from fasids.http_ingest import (
    FieldRecord,
    HttpTransaction,
    MessageLine,
    RawCaptureEntry,
    SpecViolation,
    dispatch,
    parse_header,
    read_capture,
    read_records,
    serialize_records,
)
from fasids.rule_engine import (
    MatchObject,
    ObjectHit,
    Rule,
    RuleBase,
    RuleTrigger,
    evaluate_rules,
    interpret,
    match_objects,
    parse_rule_file,
)

__all__ = [
    "FieldRecord",
    "HttpTransaction",
    "MatchObject",
    "MessageLine",
    "ObjectHit",
    "RawCaptureEntry",
    "Rule",
    "RuleBase",
    "RuleTrigger",
    "SpecViolation",
    "dispatch",
    "evaluate_rules",
    "interpret",
    "match_objects",
    "parse_header",
    "parse_rule_file",
    "read_capture",
    "read_records",
    "serialize_records",
]

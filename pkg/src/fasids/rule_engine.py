"""Rule-base of five-tuple match objects and the interpreter that fires rules.

A match object is ``<message-line, section, feature, operator, content>``;
a rule groups object numbers into an ordered sequence or an unordered
multiset. The rule file is line oriented::

    # objects: object <n>: <message-line> <section> <feature> <op> <value>
    object 1: request-line Method parameter = GET
    object 2: generic-header Host size > 200

    # rules: rule <n>: objects={...} ordered=<bool> [msg="..."]
    rule 1: objects={1, 2} ordered=true msg="example"

Values may be bare tokens or double-quoted strings; strict mode instead
confines them to the letters/digits production of the rule grammar.
"""

from __future__ import annotations

import logging
import re
from bisect import bisect_right
from collections import Counter
from dataclasses import dataclass
from enum import Enum

from fasids.http_ingest import FieldRecord, MessageLine

logger = logging.getLogger(__name__)


class Feature(str, Enum):
    PARAMETER = "parameter"
    SIZE = "size"
    REGEX = "regex"
    OCCURRENCE = "occurrence"


class Operator(str, Enum):
    EQ = "="
    GT = ">"
    LT = "<"


# `type` appears as an alias of `parameter` in object definitions.
_FEATURE_ALIASES = {"type": Feature.PARAMETER}

# Rule-language section spellings mapped onto record section names.
_SECTION_ALIASES = {
    "uri": "request-uri",
    "version": "http-version",
}

_MESSAGE_LINE_TOKENS = {
    "request-line": MessageLine.REQUEST_LINE,
    "status-line": MessageLine.STATUS_LINE,
    "generic-header": MessageLine.GENERIC_HEADER,
    "generic-hdr": MessageLine.GENERIC_HEADER,
    "request-header": MessageLine.REQUEST_HEADER,
    "request-hdr": MessageLine.REQUEST_HEADER,
    "response-header": MessageLine.RESPONSE_HEADER,
    "response-hdr": MessageLine.RESPONSE_HEADER,
    "entity-header": MessageLine.ENTITY_HEADER,
    "entity-hdr": MessageLine.ENTITY_HEADER,
    "body": MessageLine.BODY,
    "html": MessageLine.BODY,
}

# The grammar's literal Value production: one or more letters or digits,
# where the digit class is 1-9.
_STRICT_VALUE = re.compile(r"^[A-Za-z1-9]+$")

_OBJECT_LINE = re.compile(r"^object\s+(\d+)\s*:\s*(.+)$", re.IGNORECASE)
_RULE_LINE = re.compile(
    r"^rule\s+(\d+)\s*:\s*objects\s*=\s*\{([^}]*)\}\s*ordered\s*=\s*(true|false)"
    r"\s*(?:msg\s*=\s*\"([^\"]*)\")?\s*$",
    re.IGNORECASE,
)


class RuleParseError(Exception):
    """Fatal rule-file problem, carrying the offending line number."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def normalize_section(section: str) -> str:
    key = section.lower()
    return _SECTION_ALIASES.get(key, key)


@dataclass(frozen=True)
class MatchObject:
    """An elementary pattern over one field of an HTTP message."""

    object_number: int
    message_line: MessageLine
    section: str
    feature: Feature
    operator: Operator
    content: str

    def signature(self) -> tuple:
        """Identity of the test itself, ignoring the object number."""
        return (self.message_line, normalize_section(self.section),
                self.feature, self.operator, self.content)


@dataclass(frozen=True)
class Rule:
    rule_number: int
    object_list: tuple[int, ...]
    in_order: bool
    message: str = ""

    @property
    def no_of_objects(self) -> int:
        return len(self.object_list)


@dataclass(frozen=True)
class RuleBase:
    objects: dict[int, MatchObject]
    rules: dict[int, Rule]
    source_text: str = ""


@dataclass(frozen=True)
class ObjectHit:
    object_number: int
    record_index: int
    matched_value: str


@dataclass(frozen=True)
class RuleTrigger:
    rule_number: int
    witness: tuple[ObjectHit, ...]
    message: str = ""


@dataclass(frozen=True)
class MissReport:
    """Marker for a transaction whose records fired no rule.

    Carries the non-triggering hits so the caller can fold the transaction
    into frequency metrics as a non-intrusive observation.
    """

    record_count: int
    hits: tuple[ObjectHit, ...] = ()
    disposition: str = "non-intrusive-by-rules"


# ---------------------------------------------------------------------------
# Rule file parsing
# ---------------------------------------------------------------------------

def _parse_value(token_text: str, lineno: int, strict_values: bool) -> str:
    token_text = token_text.strip()
    if token_text.startswith('"') and token_text.endswith('"') and len(token_text) >= 2:
        value = token_text[1:-1]
    elif re.search(r"\s", token_text):
        raise RuleParseError(lineno, f"unquoted value contains whitespace: {token_text!r}")
    else:
        value = token_text
    if not value:
        raise RuleParseError(lineno, "empty value")
    if strict_values and not _STRICT_VALUE.match(value):
        raise RuleParseError(lineno, f"value {value!r} outside the strict letters/digits production")
    return value


def _parse_object(number: int, body: str, lineno: int, strict_values: bool) -> MatchObject:
    fields = body.split(None, 4)
    if len(fields) != 5:
        raise RuleParseError(
            lineno, "object needs <message-line> <section> <feature> <op> <value>")
    ml_token, section, feature_token, op_token, value_text = fields

    message_line = _MESSAGE_LINE_TOKENS.get(ml_token.lower())
    if message_line is None:
        raise RuleParseError(lineno, f"unknown message-line {ml_token!r}")

    feature_key = feature_token.lower()
    feature = _FEATURE_ALIASES.get(feature_key)
    if feature is None:
        try:
            feature = Feature(feature_key)
        except ValueError:
            raise RuleParseError(lineno, f"unknown feature {feature_token!r}") from None

    try:
        operator = Operator(op_token)
    except ValueError:
        raise RuleParseError(lineno, f"unknown operator {op_token!r}") from None

    content = _parse_value(value_text, lineno, strict_values)

    if feature in (Feature.PARAMETER, Feature.REGEX) and operator is not Operator.EQ:
        raise RuleParseError(
            lineno, f"feature {feature.value} only supports '=' (got {operator.value!r})")
    if feature in (Feature.SIZE, Feature.OCCURRENCE):
        if not re.fullmatch(r"\d+", content):
            raise RuleParseError(
                lineno, f"feature {feature.value} needs numeric content, got {content!r}")
    if feature is Feature.REGEX:
        try:
            re.compile(content)
        except re.error as exc:
            raise RuleParseError(lineno, f"bad regular expression {content!r}: {exc}") from None

    return MatchObject(number, message_line, section, feature, operator, content)


def parse_rule_file(text: str, strict_values: bool = False) -> RuleBase:
    """Parse rule text into a :class:`RuleBase`.

    Grammar violations and dangling object references are fatal and carry a
    line number.
    """
    objects: dict[int, MatchObject] = {}
    rules: dict[int, Rule] = {}

    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue

        obj_match = _OBJECT_LINE.match(line)
        if obj_match:
            number = int(obj_match.group(1))
            if number in objects:
                raise RuleParseError(lineno, f"duplicate object number {number}")
            objects[number] = _parse_object(number, obj_match.group(2), lineno, strict_values)
            continue

        rule_match = _RULE_LINE.match(line)
        if rule_match:
            number = int(rule_match.group(1))
            if number in rules:
                raise RuleParseError(lineno, f"duplicate rule number {number}")
            items = [t.strip() for t in rule_match.group(2).split(",") if t.strip()]
            if not items or not all(re.fullmatch(r"\d+", t) for t in items):
                raise RuleParseError(lineno, f"bad object list {{{rule_match.group(2)}}}")
            rules[number] = Rule(
                rule_number=number,
                object_list=tuple(int(t) for t in items),
                in_order=rule_match.group(3).lower() == "true",
                message=rule_match.group(4) or "",
            )
            continue

        raise RuleParseError(lineno, f"unrecognized line: {line!r}")

    for rule in rules.values():
        for number in rule.object_list:
            if number not in objects:
                raise RuleParseError(0, f"rule {rule.rule_number} references missing object {number}")

    return RuleBase(objects=objects, rules=rules, source_text=text)


def load_rule_file(path, strict_values: bool = False) -> RuleBase:
    from pathlib import Path

    return parse_rule_file(Path(path).read_text(encoding="utf-8"), strict_values=strict_values)


# ---------------------------------------------------------------------------
# Matching
# ---------------------------------------------------------------------------

def _value_size(value: str) -> int:
    return len(value.encode("utf-8"))


def _compare(op: Operator, left: int, right: int) -> bool:
    if op is Operator.EQ:
        return left == right
    if op is Operator.GT:
        return left > right
    return left < right


def match_objects(records: list[FieldRecord], rulebase: RuleBase) -> list[ObjectHit]:
    """Scan one transaction's records and emit every object hit.

    parameter/size/regex tests run per record; occurrence tests compare the
    final per-transaction count of a (message-line, section) key, anchoring
    the hit at the record that decides it. Identical five-tuples are
    evaluated once per record, with hits fanned out to every object number
    that shares the test.
    """
    by_signature: dict[tuple, list[MatchObject]] = {}
    for obj in rulebase.objects.values():
        by_signature.setdefault(obj.signature(), []).append(obj)

    per_record: dict[tuple[MessageLine, str], list[tuple]] = {}
    occurrence: dict[tuple[MessageLine, str], list[tuple]] = {}
    disabled: set[int] = set()
    for signature, members in by_signature.items():
        message_line, section, feature, operator, content = signature
        key = (message_line, section)
        if feature is Feature.OCCURRENCE:
            occurrence.setdefault(key, []).append((signature, members))
        else:
            per_record.setdefault(key, []).append((signature, members))

    key_indices: dict[tuple[MessageLine, str], list[int]] = {}
    hits: list[ObjectHit] = []

    for index, record in enumerate(records):
        key = (record.message_line, normalize_section(record.section))
        key_indices.setdefault(key, []).append(index)
        for signature, members in per_record.get(key, ()):
            _, _, feature, operator, content = signature
            if feature is Feature.PARAMETER:
                matched = operator is Operator.EQ and record.value == content
            elif feature is Feature.SIZE:
                matched = _compare(operator, _value_size(record.value), int(content))
            else:  # regex
                try:
                    matched = re.search(content, record.value) is not None
                except re.error as exc:
                    for obj in members:
                        if obj.object_number not in disabled:
                            disabled.add(obj.object_number)
                            logger.warning(
                                "object %d disabled for this transaction: %s",
                                obj.object_number, exc)
                    continue
            if matched:
                for obj in members:
                    hits.append(ObjectHit(obj.object_number, index, record.value))

    for key, tests in occurrence.items():
        indices = key_indices.get(key, [])
        count = len(indices)
        if count == 0:
            continue  # no witness record, no hit
        for signature, members in tests:
            _, _, _, operator, content = signature
            threshold = int(content)
            if not _compare(operator, count, threshold):
                continue
            if operator is Operator.GT:
                # anchor where the count first exceeded the threshold, so a
                # growing transaction never relocates the hit
                anchor = indices[threshold]
            else:
                anchor = indices[-1]
            for obj in members:
                hits.append(ObjectHit(obj.object_number, anchor, records[anchor].value))

    hits.sort(key=lambda h: (h.record_index, h.object_number))
    return hits


# ---------------------------------------------------------------------------
# Rule evaluation
# ---------------------------------------------------------------------------

def _ordered_witness(object_list: tuple[int, ...],
                     hits_by_object: dict[int, list[ObjectHit]]) -> tuple[ObjectHit, ...] | None:
    witness: list[ObjectHit] = []
    last_index = -1
    for needed in object_list:
        candidates = hits_by_object.get(needed, [])
        # per-object hits are sorted by record index, so the leftmost usable
        # hit is the first one strictly past the previous witness record
        position = bisect_right(candidates, last_index, key=lambda h: h.record_index)
        if position == len(candidates):
            return None
        found = candidates[position]
        witness.append(found)
        last_index = found.record_index
    return tuple(witness)


def _unordered_witness(object_list: tuple[int, ...],
                       hits_by_object: dict[int, list[ObjectHit]]) -> tuple[ObjectHit, ...] | None:
    chosen: list[ObjectHit] = []
    for number, count in Counter(object_list).items():
        matching = hits_by_object.get(number, [])
        if len(matching) < count:
            return None
        chosen.extend(matching[:count])
    chosen.sort(key=lambda h: (h.record_index, h.object_number))
    return tuple(chosen)


def evaluate_rules(hits: list[ObjectHit], rulebase: RuleBase) -> list[RuleTrigger]:
    """Fire every rule whose object list is satisfied by the hit stream.

    Ordered rules need their object list as a subsequence of the hits with
    strictly increasing record indices; unordered rules need the multiset of
    their object list covered by distinct hits. Witnesses are the leftmost
    earliest choice in both cases.
    """
    hits_by_object: dict[int, list[ObjectHit]] = {}
    for hit in hits:
        hits_by_object.setdefault(hit.object_number, []).append(hit)

    triggers: list[RuleTrigger] = []
    for number in sorted(rulebase.rules):
        rule = rulebase.rules[number]
        if rule.in_order:
            witness = _ordered_witness(rule.object_list, hits_by_object)
        else:
            witness = _unordered_witness(rule.object_list, hits_by_object)
        if witness is not None:
            triggers.append(RuleTrigger(rule.rule_number, witness, rule.message))
    return triggers


def interpret(records: list[FieldRecord], rulebase: RuleBase) -> tuple[list[RuleTrigger], MissReport | None]:
    """Match then evaluate; a missed transaction comes back with a report."""
    hits = match_objects(records, rulebase)
    triggers = evaluate_rules(hits, rulebase)
    if triggers:
        return triggers, None
    return [], MissReport(record_count=len(records), hits=tuple(hits))

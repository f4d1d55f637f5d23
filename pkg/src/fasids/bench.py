"""Timing harnesses: interpreter scan time vs rule-base size, payload scan time vs size.

Synthetic rule-bases cycle through a finite pool of distinct signatures, so
growing the object count past the pool re-uses tests the matcher evaluates
once per record; scan time is expected to rise roughly linearly at small
counts and flatten once duplicates dominate.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass

from fasids.http_ingest import FieldRecord, MessageLine
from fasids.payload_analyzer import ScriptScanConfig, SignatureTable, scan_payload
from fasids.rule_engine import Feature, MatchObject, Operator, Rule, RuleBase, interpret

GH = MessageLine.GENERIC_HEADER
RL = MessageLine.REQUEST_LINE

_METHODS = ("GET", "POST", "PUT", "DELETE", "HEAD", "OPTIONS", "PATCH", "TRACE")


@dataclass(frozen=True)
class BenchRow:
    parameter: int
    trials: int
    mean_s: float
    median_s: float


def _object_template(index: int) -> tuple[MessageLine, str, Feature, Operator, str]:
    """Deterministic pool of ~120 distinct object bodies, cycled past that."""
    slot = index % 120
    if slot < 8:
        return RL, "Method", Feature.PARAMETER, Operator.EQ, _METHODS[slot]
    if slot < 40:
        return GH, "Host", Feature.SIZE, Operator.GT, str(8 + (slot - 8))
    if slot < 80:
        return RL, "Uri", Feature.REGEX, Operator.EQ, f"/page{slot - 40}"
    if slot < 85:
        return GH, "Accept", Feature.OCCURRENCE, Operator.GT, str(1 + (slot - 80))
    if slot < 105:
        return GH, "User-Agent", Feature.SIZE, Operator.GT, str(10 + (slot - 85))
    return GH, "Referer", Feature.REGEX, Operator.EQ, f"section{slot - 105}"


def synthesize_rulebase(n_objects: int) -> RuleBase:
    objects = {}
    for number in range(1, n_objects + 1):
        message_line, section, feature, operator, content = _object_template(number - 1)
        objects[number] = MatchObject(number, message_line, section, feature, operator, content)
    rules = {}
    rule_number = 1
    for start in range(1, n_objects - 1, 3):
        rules[rule_number] = Rule(
            rule_number,
            (start, start + 1, start + 2),
            in_order=rule_number % 2 == 1,
        )
        rule_number += 1
    return RuleBase(objects=objects, rules=rules)


def synthesize_transactions(count: int = 30) -> list[list[FieldRecord]]:
    transactions = []
    for i in range(count):
        records = [
            FieldRecord(RL, "Method", _METHODS[i % len(_METHODS)]),
            FieldRecord(RL, "Request-URI", f"/page{i % 50}/view"),
            FieldRecord(RL, "HTTP-version", "HTTP/1.1"),
            FieldRecord(GH, "Host", "host-" + "x" * (i % 24) + ".example"),
            FieldRecord(GH, "User-Agent", "agent/" + "y" * (i % 32)),
        ]
        records += [FieldRecord(GH, "Accept", f"type/{j}") for j in range(1 + i % 4)]
        records.append(FieldRecord(GH, "Referer", f"http://ref.example/section{i % 20}"))
        records.append(FieldRecord(GH, "Connection", "Keep-Alive"))
        transactions.append(records)
    return transactions


def bench_objects(object_counts: list[int], trials: int = 3,
                  transaction_count: int = 30) -> list[BenchRow]:
    """Mean/median per-request interpreter time for each rule-base size."""
    transactions = synthesize_transactions(transaction_count)
    rows = []
    for count in object_counts:
        if count <= 0:
            raise ValueError("object counts must be positive")
        rulebase = synthesize_rulebase(count)
        per_request: list[float] = []
        for _ in range(trials):
            started = time.perf_counter()
            for records in transactions:
                interpret(records, rulebase)
            elapsed = time.perf_counter() - started
            per_request.append(elapsed / len(transactions))
        rows.append(BenchRow(
            parameter=count,
            trials=trials,
            mean_s=statistics.fmean(per_request),
            median_s=statistics.median(per_request),
        ))
    return rows


_BENIGN_BLOCK = (
    b"<div class=\"item\"><p>catalog entry</p>"
    b"<img src=\"thumb.png\" alt=\"t\"><a href=\"/next\">next</a></div>\n"
)


def synthesize_html(size: int) -> bytes:
    head = b"<html><body>\n"
    tail = b"</body></html>\n"
    filler_len = max(0, size - len(head) - len(tail))
    repeats = filler_len // len(_BENIGN_BLOCK) + 1
    filler = (_BENIGN_BLOCK * repeats)[:filler_len]
    return head + filler + tail


def bench_payload(sizes: list[int], trials: int = 3) -> list[BenchRow]:
    """Mean/median payload scan time per document size."""
    table = SignatureTable.default()
    config = ScriptScanConfig()
    rows = []
    for size in sizes:
        if size <= 0:
            raise ValueError("payload sizes must be positive")
        body = synthesize_html(size)
        times: list[float] = []
        for _ in range(trials):
            started = time.perf_counter()
            scan_payload(body, "identity", table, config)
            times.append(time.perf_counter() - started)
        rows.append(BenchRow(
            parameter=size,
            trials=trials,
            mean_s=statistics.fmean(times),
            median_s=statistics.median(times),
        ))
    return rows


def objects_csv(rows: list[BenchRow]) -> str:
    lines = ["n_objects,trials,mean_response_s,median_response_s"]
    lines += [f"{r.parameter},{r.trials},{r.mean_s:.9f},{r.median_s:.9f}" for r in rows]
    return "\n".join(lines) + "\n"


def payload_csv(rows: list[BenchRow]) -> str:
    lines = ["payload_bytes,trials,mean_scan_s,median_scan_s"]
    lines += [f"{r.parameter},{r.trials},{r.mean_s:.9f},{r.median_s:.9f}" for r in rows]
    return "\n".join(lines) + "\n"

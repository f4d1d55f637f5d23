"""Shared test oracles: brute-force rule enumeration and defuzzification."""

from __future__ import annotations

import itertools
import random
from collections import Counter

from fasids.fuzzy_ids import ConsequentScale
from fasids.http_ingest import FieldRecord, MessageLine
from fasids.rule_engine import (
    Feature,
    MatchObject,
    ObjectHit,
    Operator,
    Rule,
    RuleBase,
)


def oracle_triggers(hits: list[ObjectHit], rulebase: RuleBase) -> set[int]:
    """Enumerate every hit sub(sequence|multiset) and collect firing rules."""
    fired = set()
    for number, rule in rulebase.rules.items():
        k = len(rule.object_list)
        for combo in itertools.combinations(range(len(hits)), k):
            chosen = [hits[i] for i in combo]
            if rule.in_order:
                if [h.object_number for h in chosen] == list(rule.object_list) and all(
                    chosen[i].record_index < chosen[i + 1].record_index for i in range(k - 1)
                ):
                    fired.add(number)
                    break
            elif Counter(h.object_number for h in chosen) == Counter(rule.object_list):
                fired.add(number)
                break
    return fired


_SECTIONS = [
    (MessageLine.REQUEST_LINE, "Method"),
    (MessageLine.GENERIC_HEADER, "Host"),
    (MessageLine.GENERIC_HEADER, "Accept"),
]
_VALUES = ["GET", "POST", "alpha", "beta", "a-much-longer-value"]


def random_instance(rng: random.Random, occurrence_gt_only: bool = False):
    """A small random rule-base plus a small random transaction."""
    objects: dict[int, MatchObject] = {}
    n_objects = rng.randint(1, 5)
    for number in range(1, n_objects + 1):
        message_line, section = rng.choice(_SECTIONS)
        roll = rng.random()
        if roll < 0.35:
            obj = MatchObject(number, message_line, section, Feature.PARAMETER,
                              Operator.EQ, rng.choice(_VALUES))
        elif roll < 0.6:
            op = Operator.GT if occurrence_gt_only else rng.choice(list(Operator))
            obj = MatchObject(number, message_line, section, Feature.SIZE,
                              op, str(rng.randint(1, 12)))
        elif roll < 0.8:
            obj = MatchObject(number, message_line, section, Feature.REGEX,
                              Operator.EQ, rng.choice(["a", "GE.", "beta|alpha", "^/"]))
        else:
            op = Operator.GT if occurrence_gt_only else rng.choice(list(Operator))
            obj = MatchObject(number, message_line, section, Feature.OCCURRENCE,
                              op, str(rng.randint(1, 3)))
        objects[number] = obj

    rules: dict[int, Rule] = {}
    for number in range(1, rng.randint(1, 3) + 1):
        length = rng.randint(1, 4)
        rules[number] = Rule(
            number,
            tuple(rng.randint(1, n_objects) for _ in range(length)),
            in_order=rng.random() < 0.5,
        )
    records = [
        FieldRecord(*rng.choice(_SECTIONS), rng.choice(_VALUES))
        for _ in range(rng.randint(0, 8))
    ]
    return records, RuleBase(objects=objects, rules=rules)


def mom_oracle(strengths: dict[str, float], scale: ConsequentScale, resolution: int):
    """Independent mean-of-maxima: build the aggregate array, then average
    the argmax set."""
    samples = [i / (resolution - 1) for i in range(resolution)]
    membership = []
    for u in samples:
        level = 0.0
        for label, lo, hi in scale.anchors:
            s = min(max(strengths.get(label, 0.0), 0.0), 1.0)
            if lo <= u <= hi:
                level = max(level, s)
        membership.append(level)
    peak = max(membership)
    if peak == 0.0:
        return 0.0, False
    arg = [u for u, m in zip(samples, membership) if m == peak]
    return sum(arg) / len(arg), True

"""Corpus-level noise filters for extracted triples, with an audit trail."""

from __future__ import annotations

import json
import re
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

from .errors import CTIKGError
from .ontology import EntityType, OntologySchema, RelationType, TypedTriple, validate_triple

SAMPLE_SIZE = 5


class FilterConfigError(CTIKGError, ValueError):
    pass


@dataclass
class RuleReport:
    name: str
    input_count: int
    removed_count: int
    sample_removed: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "input_count": self.input_count,
            "removed_count": self.removed_count,
            "sample_removed": list(self.sample_removed),
        }


@dataclass
class FilterReport:
    rules: list[RuleReport] = field(default_factory=list)
    final_count: int = 0
    final_entity_count: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "rules": [r.to_dict() for r in self.rules],
            "final_count": self.final_count,
            "final_entity_count": self.final_entity_count,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False)

    def to_table(self) -> str:
        width = max([len(r.name) for r in self.rules] + [len("rule")])
        lines = [f"{'rule':<{width}}  {'input':>8}  {'removed':>8}  {'kept':>8}"]
        for r in self.rules:
            kept = r.input_count - r.removed_count
            lines.append(f"{r.name:<{width}}  {r.input_count:>8}  {r.removed_count:>8}  {kept:>8}")
        lines.append(f"final triples: {self.final_count}  entities: {self.final_entity_count}")
        return "\n".join(lines)


def _split(name: str, triples: Sequence[TypedTriple], keep: Callable[[TypedTriple], bool]):
    survivors: list[TypedTriple] = []
    removed: list[TypedTriple] = []
    for t in triples:
        (survivors if keep(t) else removed).append(t)
    report = RuleReport(name, len(triples), len(removed), [t.format() for t in removed[:SAMPLE_SIZE]])
    return survivors, report


# --- individual rules -------------------------------------------------------


def filter_ontology(triples: Sequence[TypedTriple], schema: OntologySchema | None = None):
    schema = schema or OntologySchema.default()
    return _split("ontology", triples, lambda t: validate_triple(t, schema).valid)


_MONTH = (
    r"(?:jan(?:uary)?|feb(?:ruary)?|mar(?:ch)?|apr(?:il)?|may|june?|july?|aug(?:ust)?"
    r"|sep(?:t(?:ember)?)?|oct(?:ober)?|nov(?:ember)?|dec(?:ember)?)\.?"
)
DATE_PATTERNS = (
    # four-digit year
    re.compile(r"(?<!\d)(?:19|20)\d{2}(?!\d)"),
    # month name with a day or year: "July 22", "22 July", "Sept. 2019"
    re.compile(rf"\b{_MONTH}\s+\d{{1,2}}(?:st|nd|rd|th)?\b", re.I),
    re.compile(rf"\b\d{{1,2}}(?:st|nd|rd|th)?\s+(?:of\s+)?{_MONTH}(?!\w)", re.I),
    # dd/mm/yyyy, dd.mm.yyyy, dd-mm-yyyy
    re.compile(r"(?<!\d)\d{1,2}[./-]\d{1,2}[./-]\d{2,4}(?!\d)"),
)


def looks_like_date(text: str) -> bool:
    return any(p.search(text) for p in DATE_PATTERNS)


def _date_ok(t: TypedTriple) -> bool:
    if t.relation != RelationType.DISCOVERED_IN:
        return True
    slots = [s for s, ty in ((t.head, t.head_type), (t.tail, t.tail_type)) if ty == EntityType.TIME]
    if not slots and not t.typed:
        slots = [t.head, t.tail]
    return any(looks_like_date(s) for s in slots)


def filter_discovered_in_requires_date(triples: Sequence[TypedTriple]):
    """discoveredIn survives only if its Time participant carries a real date.

    Untyped discoveredIn triples pass if either side holds a date.
    """
    return _split("discovered_in_date", triples, _date_ok)


def is_numeric_subject(head: str) -> bool:
    return not any(ch.isalpha() for ch in head.strip())


def filter_numeric_subjects(triples: Sequence[TypedTriple]):
    return _split("numeric_subjects", triples, lambda t: not is_numeric_subject(t.head))


NAMED_TYPES = frozenset({EntityType.MALWARE, EntityType.THREAT_ACTOR})
DETERMINERS = frozenset({"the", "a", "an", "this", "it"})


def is_named_entity(text: str) -> bool:
    """Crude proper-name test used for Malware and ThreatActor entities."""
    words = text.split()
    if not words or words[0] in DETERMINERS:
        return False
    return any(ch.isupper() or ch.isdigit() for ch in text)


def _named_ok(t: TypedTriple) -> bool:
    for name, ty in ((t.head, t.head_type), (t.tail, t.tail_type)):
        if ty in NAMED_TYPES and not is_named_entity(name):
            return False
    return True


def filter_non_named(triples: Sequence[TypedTriple]):
    return _split("non_named", triples, _named_ok)


def mention_counts(triples: Sequence[TypedTriple], unit: str = "auto") -> dict[str, int]:
    """How often each Malware-typed surface string is mentioned, case-insensitively.

    Every head/tail occurrence of such a string counts, whatever its type in
    that triple. With ``unit="documents"`` (or ``auto`` when every triple has
    provenance) distinct source documents are counted instead.
    """
    if unit == "auto":
        unit = "documents" if triples and all(t.provenance for t in triples) else "triples"
    if unit not in ("triples", "documents"):
        raise FilterConfigError(f"unknown counting unit {unit!r}")
    malware = {
        name.lower()
        for t in triples
        for name, ty in ((t.head, t.head_type), (t.tail, t.tail_type))
        if ty == EntityType.MALWARE
    }
    occurrences: dict[str, int] = defaultdict(int)
    docs: dict[str, set] = defaultdict(set)
    for t in triples:
        for name in (t.head.lower(), t.tail.lower()):
            if name in malware:
                occurrences[name] += 1
                if t.provenance:
                    docs[name].add(t.provenance[0])
    if unit == "documents":
        return {k: len(docs[k]) for k in malware}
    return {k: occurrences[k] for k in malware}


def filter_rare_malware(triples: Sequence[TypedTriple], min_mentions: int = 5, unit: str = "auto"):
    """Drop triples whose Malware entity is mentioned fewer than ``min_mentions`` times.

    Removing triples lowers other entities' counts, so the rule is repeated
    until nothing changes; this keeps it idempotent.
    """
    if min_mentions < 1:
        raise FilterConfigError("min_mentions must be >= 1")
    current = list(triples)
    removed_all: list[TypedTriple] = []
    while True:
        counts = mention_counts(current, unit)

        def keep(t: TypedTriple) -> bool:
            return all(
                counts.get(name.lower(), 0) >= min_mentions
                for name, ty in ((t.head, t.head_type), (t.tail, t.tail_type))
                if ty == EntityType.MALWARE
            )

        survivors = [t for t in current if keep(t)]
        if len(survivors) == len(current):
            break
        removed_all += [t for t in current if not keep(t)]
        current = survivors
    report = RuleReport("rare_malware", len(triples), len(removed_all),
                        [t.format() for t in removed_all[:SAMPLE_SIZE]])
    return current, report


# --- pipeline ---------------------------------------------------------------


@dataclass(frozen=True)
class FilterRule:
    """A named, parameterised filter step."""

    name: str
    params: Mapping[str, Any] = field(default_factory=dict)

    def apply(self, triples: Sequence[TypedTriple], schema: OntologySchema | None = None):
        fn = RULES.get(self.name)
        if fn is None:
            raise FilterConfigError(f"unknown filter rule {self.name!r}; known: {sorted(RULES)}")
        if self.name == "ontology":
            return fn(triples, schema, **self.params)
        return fn(triples, **self.params)


RULES: dict[str, Callable[..., Any]] = {
    "ontology": filter_ontology,
    "discovered_in_date": filter_discovered_in_requires_date,
    "numeric_subjects": filter_numeric_subjects,
    "non_named": filter_non_named,
    "rare_malware": filter_rare_malware,
}

POINTWISE_RULES = frozenset({"ontology", "discovered_in_date", "numeric_subjects", "non_named"})

DEFAULT_PIPELINE: tuple[FilterRule, ...] = (
    FilterRule("ontology"),
    FilterRule("discovered_in_date"),
    FilterRule("numeric_subjects"),
    FilterRule("non_named"),
    FilterRule("rare_malware", {"min_mentions": 5}),
)


def rules_from_config(items: Iterable[Mapping[str, Any]]) -> list[FilterRule]:
    rules = []
    for item in items:
        item = dict(item)
        try:
            name = item.pop("name")
        except KeyError:
            raise FilterConfigError(f"filter rule without a name: {item!r}") from None
        if name not in RULES:
            raise FilterConfigError(f"unknown filter rule {name!r}")
        rules.append(FilterRule(name, item))
    return rules


def entity_count(triples: Iterable[TypedTriple]) -> int:
    return len({s.lower() for t in triples for s in (t.head, t.tail)})


def run_pipeline(
    triples: Sequence[TypedTriple],
    rules: Sequence[FilterRule] = DEFAULT_PIPELINE,
    schema: OntologySchema | None = None,
):
    """Apply ``rules`` in order, each one seeing the previous survivors."""
    current = list(triples)
    report = FilterReport()
    for rule in rules:
        current, rr = rule.apply(current, schema)
        rr.name = rule.name
        report.rules.append(rr)
    report.final_count = len(current)
    report.final_entity_count = entity_count(current)
    return current, report

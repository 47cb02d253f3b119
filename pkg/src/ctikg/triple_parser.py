"""Tolerant parser from raw LLM output to triples.

Recognised shapes, tried per line:

* bracketed tuples ``[a, r, b]``, possibly several per line and possibly
  wrapped in an outer list
* quoted tuples ``['a', 'r', 'b']``
* numbered lines ``3. a, r, b``
* typed tuples ``[a[Malware], r, b[Location]]``

Commas only separate fields at the top level of a tuple: commas inside
parentheses, nested brackets or a quoted field do not count.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field

from .ontology import EntityType, TypedTriple, UnknownEntityType, parse_entity_type

_NUMBERED = re.compile(r"^\s*\d+\s*[.)]\s+(?P<body>.*)$")
_TYPED_FIELD = re.compile(r"^(?P<name>.*?)\s*\[(?P<type>[^\[\]]*)\]$", re.S)
_QUOTES = "'\"`"
_OPEN = {"[": "]", "(": ")", "{": "}"}
_CLOSE = {v: k for k, v in _OPEN.items()}


@dataclass
class ParseReport:
    triples: list[TypedTriple] = field(default_factory=list)
    rejected_lines: list[tuple[str, str]] = field(default_factory=list)
    shape_stats: Counter = field(default_factory=Counter)
    contributing_lines: list[int] = field(default_factory=list)
    notes: list[tuple[str, str]] = field(default_factory=list)
    line_count: int = 0

    def to_dict(self) -> dict:
        return {
            "triples": len(self.triples),
            "lines": self.line_count,
            "contributing_lines": len(self.contributing_lines),
            "rejected_lines": [list(r) for r in self.rejected_lines],
            "shape_stats": dict(sorted(self.shape_stats.items())),
            "notes": [list(n) for n in self.notes],
        }


def split_top_level(text: str, sep: str = ",") -> list[str]:
    """Split on ``sep`` outside brackets, parentheses and quoted fields.

    A quote character only opens a quoted span when it starts a field, so
    apostrophes inside words ("Apple's") do not derail the split.
    """
    parts: list[str] = []
    buf: list[str] = []
    stack: list[str] = []
    quote: str | None = None
    field_start = True
    for ch in text:
        if quote is not None:
            buf.append(ch)
            if ch == quote:
                quote = None
            continue
        if field_start and ch in _QUOTES and not stack:
            quote = ch
            buf.append(ch)
            field_start = False
            continue
        if ch.isspace() and field_start:
            buf.append(ch)
            continue
        field_start = False
        if ch in _OPEN:
            stack.append(_OPEN[ch])
        elif stack and ch == stack[-1]:
            stack.pop()
        elif ch == sep and not stack:
            parts.append("".join(buf))
            buf = []
            field_start = True
            continue
        buf.append(ch)
    parts.append("".join(buf))
    return parts


def bracket_groups(line: str) -> list[str]:
    """Contents of the top-level ``[...]`` groups in ``line`` (unbalanced tail dropped)."""
    groups: list[str] = []
    depth = 0
    start = 0
    quote: str | None = None
    for i, ch in enumerate(line):
        if quote is not None:
            if ch == quote:
                quote = None
            continue
        if ch in _QUOTES and depth > 0 and i > 0 and line[i - 1] in "[, ":
            quote = ch
            continue
        if ch == "[":
            if depth == 0:
                start = i + 1
            depth += 1
        elif ch == "]" and depth > 0:
            depth -= 1
            if depth == 0:
                groups.append(line[start:i])
    return groups


def _strip_quotes(s: str) -> tuple[str, bool]:
    s = s.strip()
    if len(s) >= 2 and s[0] == s[-1] and s[0] in _QUOTES:
        return s[1:-1].strip(), True
    return s, False


class _Reject(Exception):
    pass


def _entity(field_text: str, notes: list[tuple[str, str]]) -> tuple[str, EntityType | None, bool]:
    text, quoted = _strip_quotes(field_text)
    m = _TYPED_FIELD.match(text)
    if m and m.group("name").strip():
        name, quoted_inner = _strip_quotes(m.group("name"))
        label = m.group("type").strip()
        try:
            return name, parse_entity_type(label), quoted or quoted_inner
        except UnknownEntityType:
            notes.append((text, f"unknown entity type {label!r}; kept untyped"))
            return name, None, quoted or quoted_inner
    return text, None, quoted


def _tuple(fields: list[str], notes: list[tuple[str, str]]) -> tuple[TypedTriple, str]:
    # typed tails may carry a comma of their own: "July 22, 2014[Time]"
    if len(fields) > 3 and _TYPED_FIELD.match(_strip_quotes(fields[-1])[0]):
        fields = fields[:2] + [",".join(fields[2:])]
    if len(fields) != 3:
        raise _Reject(f"expected 3 fields, found {len(fields)}")
    head, htype, hq = _entity(fields[0], notes)
    relation, rq = _strip_quotes(fields[1])
    tail, ttype, tq = _entity(fields[2], notes)
    if not head or not relation or not tail:
        raise _Reject("empty field")
    if htype is not None or ttype is not None:
        shape = "typed"
    elif hq and rq and tq:
        shape = "quoted"
    else:
        shape = "bracketed"
    return TypedTriple(head, relation, tail, htype, ttype), shape


def _bracketed(line: str, notes: list[tuple[str, str]]) -> tuple[list[tuple[TypedTriple, str]], list[str]]:
    found: list[tuple[TypedTriple, str]] = []
    problems: list[str] = []
    pending = bracket_groups(line)
    while pending:
        group = pending.pop(0)
        inner = group.strip()
        # outer list of tuples: [[a, r, b], [c, r, d]]
        if inner.startswith("[") and all(p.strip().startswith("[") for p in split_top_level(inner)):
            pending = bracket_groups(inner) + pending
            continue
        try:
            found.append(_tuple(split_top_level(group), notes))
        except _Reject as exc:
            problems.append(f"[{group}]: {exc}")
    return found, problems


def parse_triples(raw: str, provenance: tuple | None = None) -> ParseReport:
    """Pull every recognisable triple out of one model output.

    Never raises: lines without a usable triple land in ``rejected_lines``.
    Duplicates keep their first occurrence.
    """
    report = ParseReport()
    seen: set[tuple] = set()
    for lineno, line in enumerate(raw.splitlines()):
        if not line.strip():
            continue
        report.line_count += 1
        numbered = _NUMBERED.match(line)
        body = numbered.group("body") if numbered else line
        candidates: list[tuple[TypedTriple, str]] = []
        problems: list[str] = []

        if "[" in body and (not numbered or body.lstrip().startswith("[")):
            candidates, problems = _bracketed(body, report.notes)
        elif numbered:
            try:
                triple, shape = _tuple(split_top_level(body.strip()), report.notes)
                candidates = [(triple, "numbered" if shape == "bracketed" else shape)]
            except _Reject as exc:
                problems.append(str(exc))
        else:
            problems.append("no triple shape")

        if not candidates:
            report.rejected_lines.append((line, "; ".join(problems) or "no triple shape"))
            continue
        report.contributing_lines.append(lineno)
        for p in problems:
            report.notes.append((line, p))
        for triple, shape in candidates:
            if triple.key() in seen:
                continue
            seen.add(triple.key())
            if provenance is not None:
                triple = TypedTriple(triple.head, triple.relation, triple.tail,
                                     triple.head_type, triple.tail_type, provenance)
            report.triples.append(triple)
            report.shape_stats[shape] += 1
    return report


_WS = re.compile(r"\s+")


def _norm(s: str) -> str:
    return _WS.sub(" ", s).strip()


def canonicalize(triples: list[TypedTriple]) -> list[TypedTriple]:
    """Whitespace-normalise, sort case-insensitively and drop duplicates."""
    cleaned = [
        TypedTriple(_norm(t.head), _norm(t.relation_name), _norm(t.tail),
                    t.head_type, t.tail_type, t.provenance)
        for t in triples
    ]

    def sort_key(t: TypedTriple) -> tuple:
        k = t.key()
        return (k[0].lower(), k[1].lower(), k[2].lower()) + k

    out: list[TypedTriple] = []
    seen: set[tuple] = set()
    for t in sorted(cleaned, key=sort_key):
        if t.key() not in seen:
            seen.add(t.key())
            out.append(t)
    return out


def serialize(triples: list[TypedTriple], sep: str = ", ") -> str:
    return sep.join(t.format() for t in triples)

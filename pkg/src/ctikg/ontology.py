"""CTI ontology: entity types, relation types, the triple model and schema checks."""

from __future__ import annotations

import enum
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .errors import CTIKGError


class UnknownEntityType(CTIKGError, ValueError):
    pass


class UnknownRelation(CTIKGError, ValueError):
    pass


class SchemaError(CTIKGError, ValueError):
    pass


class EntityType(str, enum.Enum):
    MALWARE = "Malware"
    MALWARE_TYPE = "MalwareType"
    APPLICATION = "Application"
    OPERATING_SYSTEM = "OperatingSystem"
    ORGANIZATION = "Organization"
    PERSON = "Person"
    TIME = "Time"
    THREAT_ACTOR = "ThreatActor"
    LOCATION = "Location"
    INDICATOR = "Indicator"
    ATTACK_PATTERN = "AttackPattern"

    def __str__(self) -> str:
        return self.value


class RelationType(str, enum.Enum):
    IS_A = "isA"
    TARGETS = "targets"
    USES = "uses"
    HAS_AUTHOR = "hasAuthor"
    HAS_ALIAS = "hasAlias"
    INDICATES = "indicates"
    DISCOVERED_IN = "discoveredIn"
    EXPLOITS = "exploits"
    VARIANT_OF = "variantOf"
    HAS = "has"

    def __str__(self) -> str:
        return self.value


_ENTITY_LOOKUP = {t.value.lower(): t for t in EntityType}
_RELATION_LOOKUP = {r.value.lower(): r for r in RelationType}


def _squash(label: str) -> str:
    return "".join(label.split()).lower()


def parse_entity_type(label: str) -> EntityType:
    """Map a label to its entity type, ignoring case and whitespace.

    >>> parse_entity_type("operating system")
    <EntityType.OPERATING_SYSTEM: 'OperatingSystem'>
    """
    if isinstance(label, EntityType):
        return label
    try:
        return _ENTITY_LOOKUP[_squash(label)]
    except KeyError:
        raise UnknownEntityType(f"unknown entity type: {label!r}") from None


def parse_relation(label: str) -> RelationType:
    if isinstance(label, RelationType):
        return label
    try:
        return _RELATION_LOOKUP[label.strip().lower()]
    except KeyError:
        raise UnknownRelation(f"unknown relation: {label!r}") from None


def try_entity_type(label: str | None) -> EntityType | str | None:
    """Parse ``label`` if possible, otherwise hand back the raw string."""
    if label is None:
        return None
    try:
        return parse_entity_type(label)
    except UnknownEntityType:
        return label


def try_relation(label: str) -> RelationType | str:
    try:
        return parse_relation(label)
    except UnknownRelation:
        return label.strip()


Provenance = tuple  # (doc_id, paragraph_index or None)


@dataclass(frozen=True)
class TypedTriple:
    """A (head, relation, tail) fact with optional entity types.

    ``relation`` and the two type slots keep the raw string when the label is
    not part of the ontology, so that invented labels survive until
    validation decides what to do with them.
    """

    head: str
    relation: RelationType | str
    tail: str
    head_type: EntityType | str | None = None
    tail_type: EntityType | str | None = None
    provenance: Provenance | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        head = self.head.strip() if isinstance(self.head, str) else ""
        tail = self.tail.strip() if isinstance(self.tail, str) else ""
        if not head or not tail:
            raise ValueError("triple head and tail must be non-empty")
        object.__setattr__(self, "head", head)
        object.__setattr__(self, "tail", tail)
        object.__setattr__(self, "relation", try_relation(str(self.relation)))
        object.__setattr__(self, "head_type", try_entity_type(self.head_type))
        object.__setattr__(self, "tail_type", try_entity_type(self.tail_type))
        if self.provenance is not None:
            object.__setattr__(self, "provenance", tuple(self.provenance))

    @property
    def typed(self) -> bool:
        return self.head_type is not None and self.tail_type is not None

    @property
    def relation_name(self) -> str:
        return str(self.relation)

    def key(self) -> tuple[str, str, str, str, str]:
        return (
            self.head,
            self.relation_name,
            self.tail,
            "" if self.head_type is None else str(self.head_type),
            "" if self.tail_type is None else str(self.tail_type),
        )

    def format(self) -> str:
        return format_triple(self)

    def __str__(self) -> str:
        return format_triple(self)

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "head": self.head,
            "relation": self.relation_name,
            "tail": self.tail,
            "head_type": None if self.head_type is None else str(self.head_type),
            "tail_type": None if self.tail_type is None else str(self.tail_type),
        }
        if self.provenance is not None:
            d["provenance"] = list(self.provenance)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TypedTriple":
        prov = d.get("provenance")
        return cls(
            head=d["head"],
            relation=d["relation"],
            tail=d["tail"],
            head_type=d.get("head_type"),
            tail_type=d.get("tail_type"),
            provenance=tuple(prov) if prov is not None else None,
        )


def _fmt_entity(name: str, etype: EntityType | str | None) -> str:
    return name if etype is None else f"{name}[{etype}]"


def format_triple(t: TypedTriple) -> str:
    """``[Adwind[Malware], targets, US[Location]]`` or ``[a, r, b]``."""
    return (
        f"[{_fmt_entity(t.head, t.head_type)}, {t.relation_name}, "
        f"{_fmt_entity(t.tail, t.tail_type)}]"
    )


# --- schema -----------------------------------------------------------------

ANY = "*"


@dataclass(frozen=True)
class Violation:
    code: str
    detail: str = ""

    def __str__(self) -> str:
        return f"{self.code}({self.detail})" if self.detail else self.code


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[Violation, ...] = ()

    @property
    def valid(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.valid

    @property
    def reasons(self) -> tuple[str, ...]:
        return tuple(v.code for v in self.violations)


TypePattern = tuple  # (head_type | "*", tail_type | "*")


@dataclass(frozen=True)
class OntologySchema:
    """Closed vocabulary plus optional per-relation type-pair constraints.

    ``constraints`` maps a relation to the (head, tail) type patterns it
    accepts; ``"*"`` matches any type. Relations absent from the mapping are
    unconstrained. Constraints are only checked on typed triples.
    """

    entity_types: frozenset[EntityType] = frozenset(EntityType)
    relation_types: frozenset[RelationType] = frozenset(RelationType)
    constraints: Mapping[RelationType, frozenset[TypePattern]] = field(
        default_factory=dict
    )
    require_types: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "entity_types", frozenset(self.entity_types))
        object.__setattr__(self, "relation_types", frozenset(self.relation_types))
        frozen: dict[RelationType, frozenset[TypePattern]] = {}
        for rel, patterns in self.constraints.items():
            if rel not in self.relation_types:
                raise SchemaError(f"constraint on undeclared relation {rel}")
            for pat in patterns:
                for slot in pat:
                    if slot != ANY and slot not in self.entity_types:
                        raise SchemaError(
                            f"constraint for {rel} mentions undeclared type {slot}"
                        )
            frozen[rel] = frozenset(patterns)
        object.__setattr__(self, "constraints", frozen)

    def __hash__(self) -> int:
        return hash(
            (
                self.entity_types,
                self.relation_types,
                tuple(sorted((str(k), v) for k, v in self.constraints.items())),
                self.require_types,
            )
        )

    @classmethod
    def default(cls, *, with_constraints: bool = True, require_types: bool = False) -> "OntologySchema":
        return cls(
            constraints=DEFAULT_CONSTRAINTS if with_constraints else {},
            require_types=require_types,
        )

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "OntologySchema":
        allowed = {"entity_types", "relation_types", "constraints", "require_types"}
        unknown = set(data) - allowed
        if unknown:
            raise SchemaError(f"unknown schema keys: {sorted(unknown)}")
        try:
            ents = frozenset(
                parse_entity_type(x) for x in data.get("entity_types", [t.value for t in EntityType])
            )
            rels = frozenset(
                parse_relation(x) for x in data.get("relation_types", [r.value for r in RelationType])
            )
            table: dict[RelationType, set[TypePattern]] = {}
            for item in data.get("constraints", []):
                if len(item) != 3:
                    raise SchemaError(f"constraint must be [head, relation, tail]: {item!r}")
                h, r, t = item
                pat = (
                    ANY if h == ANY else parse_entity_type(h),
                    ANY if t == ANY else parse_entity_type(t),
                )
                table.setdefault(parse_relation(r), set()).add(pat)
        except (UnknownEntityType, UnknownRelation) as exc:
            raise SchemaError(str(exc)) from exc
        return cls(
            entity_types=ents,
            relation_types=rels,
            constraints={k: frozenset(v) for k, v in table.items()},
            require_types=bool(data.get("require_types", False)),
        )

    @classmethod
    def load(cls, path: str | Path) -> "OntologySchema":
        with open(path, "rb") as fh:
            return cls.from_mapping(tomllib.load(fh))

    def allows(self, relation: RelationType, head_type: EntityType, tail_type: EntityType) -> bool:
        patterns = self.constraints.get(relation)
        if patterns is None:
            return True
        return any(
            (ph == ANY or ph == head_type) and (pt == ANY or pt == tail_type)
            for ph, pt in patterns
        )

    def listing(self) -> tuple[list[str], list[str]]:
        ents = [t.value for t in EntityType if t in self.entity_types]
        rels = [r.value for r in RelationType if r in self.relation_types]
        return ents, rels


_E = EntityType
DEFAULT_CONSTRAINTS: dict[RelationType, frozenset[TypePattern]] = {
    RelationType.DISCOVERED_IN: frozenset({(ANY, _E.TIME), (_E.TIME, ANY)}),
    RelationType.HAS_AUTHOR: frozenset(
        {(ANY, _E.PERSON), (ANY, _E.THREAT_ACTOR), (ANY, _E.ORGANIZATION)}
    ),
}


def validate_triple(t: TypedTriple, schema: OntologySchema | None = None) -> ValidationResult:
    """Check a triple against the schema; invalidity is reported, never raised."""
    schema = schema or OntologySchema.default()
    out: list[Violation] = []

    rel = t.relation
    if not isinstance(rel, RelationType) or rel not in schema.relation_types:
        out.append(Violation("unknown_relation", str(rel)))
        rel = None

    types_ok = True
    for slot, value in (("head", t.head_type), ("tail", t.tail_type)):
        if value is None:
            continue
        if not isinstance(value, EntityType) or value not in schema.entity_types:
            out.append(Violation("unknown_entity_type", f"{slot}={value}"))
            types_ok = False

    if schema.require_types and not t.typed:
        out.append(Violation("untyped_when_types_required"))

    if rel is not None and types_ok and t.typed:
        if not schema.allows(rel, t.head_type, t.tail_type):  # type: ignore[arg-type]
            out.append(
                Violation("constraint_violation", f"{t.head_type},{rel},{t.tail_type}")
            )
    return ValidationResult(tuple(out))


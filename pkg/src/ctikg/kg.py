"""In-memory knowledge graph with dense ids, provenance and link-prediction splits."""

from __future__ import annotations

import json
import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import apportion
from .errors import CTIKGError
from .ontology import TypedTriple

IdTriple = tuple[int, int, int]


class MalformedLine(CTIKGError, ValueError):
    def __init__(self, line_no: int, message: str) -> None:
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class UnsatisfiableSplit(CTIKGError, ValueError):
    pass


class KnowledgeGraph:
    """Triples over dense entity/relation ids.

    Entities are deduplicated case-insensitively and displayed with the first
    spelling seen. Repeated triples fold into a multiplicity count. Observed
    entity types are kept per entity as a multiset.
    """

    def __init__(self) -> None:
        self.entities: list[str] = []
        self.relations: list[str] = []
        self._entity_ids: dict[str, int] = {}
        self._relation_ids: dict[str, int] = {}
        self.counts: dict[IdTriple, int] = {}
        self.provenance: dict[IdTriple, list[tuple]] = {}
        self.entity_types: list[Counter] = []

    # ids -------------------------------------------------------------------

    def entity_id(self, name: str, create: bool = False) -> int:
        key = name.strip().lower()
        eid = self._entity_ids.get(key)
        if eid is None:
            if not create:
                raise KeyError(name)
            eid = len(self.entities)
            self._entity_ids[key] = eid
            self.entities.append(name.strip())
            self.entity_types.append(Counter())
        return eid

    def relation_id(self, name: str, create: bool = False) -> int:
        rid = self._relation_ids.get(name)
        if rid is None:
            if not create:
                raise KeyError(name)
            rid = len(self.relations)
            self._relation_ids[name] = rid
            self.relations.append(name)
        return rid

    def add(self, head: str, relation: str, tail: str, head_type: str | None = None,
            tail_type: str | None = None, provenance: tuple | None = None, count: int = 1) -> IdTriple:
        h = self.entity_id(head, create=True)
        r = self.relation_id(str(relation), create=True)
        t = self.entity_id(tail, create=True)
        key = (h, r, t)
        self.counts[key] = self.counts.get(key, 0) + count
        if head_type is not None:
            self.entity_types[h][str(head_type)] += count
        if tail_type is not None:
            self.entity_types[t][str(tail_type)] += count
        if provenance is not None:
            self.provenance.setdefault(key, []).append(tuple(provenance))
        return key

    # views -----------------------------------------------------------------

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def num_relations(self) -> int:
        return len(self.relations)

    @property
    def triples(self) -> list[IdTriple]:
        return list(self.counts)

    def label(self, triple: IdTriple) -> tuple[str, str, str]:
        h, r, t = triple
        return self.entities[h], self.relations[r], self.entities[t]

    def main_type(self, eid: int) -> str | None:
        types = self.entity_types[eid]
        if not types:
            return None
        return max(sorted(types), key=lambda k: types[k])

    def __len__(self) -> int:
        return len(self.counts)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return (
            self.entities == other.entities
            and self.relations == other.relations
            and self.counts == other.counts
        )

    def __repr__(self) -> str:
        return f"KnowledgeGraph(entities={self.num_entities}, relations={self.num_relations}, triples={len(self)})"


def build(triples: Iterable[TypedTriple]) -> KnowledgeGraph:
    kg = KnowledgeGraph()
    for t in triples:
        kg.add(t.head, t.relation_name, t.tail,
               None if t.head_type is None else str(t.head_type),
               None if t.tail_type is None else str(t.tail_type),
               t.provenance)
    return kg


def stats(kg: KnowledgeGraph) -> dict:
    per_relation = Counter()
    degree = Counter()
    for (h, r, t) in kg.counts:
        per_relation[kg.relations[r]] += 1
        degree[h] += 1
        degree[t] += 1
    histogram = Counter(degree[e] for e in range(kg.num_entities))
    return {
        "entities": kg.num_entities,
        "relations": kg.num_relations,
        "triples": len(kg),
        "mentions": sum(kg.counts.values()),
        "per_relation": dict(sorted(per_relation.items())),
        "degree_histogram": {str(k): histogram[k] for k in sorted(histogram)},
    }


# --- splits -----------------------------------------------------------------


@dataclass
class LPSplit:
    train: list[IdTriple] = field(default_factory=list)
    valid: list[IdTriple] = field(default_factory=list)
    test: list[IdTriple] = field(default_factory=list)
    mode: str = "transductive"

    def known(self) -> set[IdTriple]:
        return set(self.train) | set(self.valid) | set(self.test)


def split_for_lp(kg: KnowledgeGraph, ratios: Sequence[int] = (80, 10, 10), seed: int = 0) -> LPSplit:
    """Random split, then move valid/test triples with unseen ids into train.

    Train only grows during the repair pass, so a single sweep is enough for
    the closure property to hold.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or sum(ratios) <= 0:
        raise ValueError(f"bad split ratios {ratios}")
    triples = sorted(kg.counts)
    random.Random(seed).shuffle(triples)
    n_train, n_valid, _ = apportion(len(triples), ratios)
    train = triples[:n_train]
    held = [("valid", x) for x in triples[n_train:n_train + n_valid]]
    held += [("test", x) for x in triples[n_train + n_valid:]]

    ents = {e for (h, _, t) in train for e in (h, t)}
    rels = {r for (_, r, _) in train}
    out = {"valid": [], "test": []}
    for part, (h, r, t) in held:
        if h in ents and t in ents and r in rels:
            out[part].append((h, r, t))
        else:
            train.append((h, r, t))
            ents.update((h, t))
            rels.add(r)
    for part, ratio in (("valid", ratios[1]), ("test", ratios[2])):
        if ratio > 0 and not out[part] and len(triples) > 0:
            raise UnsatisfiableSplit(f"{part} split is empty after enforcing transductive closure")
    return LPSplit(train, out["valid"], out["test"])


# --- TSV --------------------------------------------------------------------


def _check_field(value: str) -> str:
    if "\t" in value or "\n" in value or "\r" in value:
        raise ValueError(f"field cannot hold tabs or line breaks: {value!r}")
    return value


def export_tsv(kg: KnowledgeGraph, path: str | Path, typed: bool = False,
               triples: Sequence[IdTriple] | None = None) -> None:
    """One line per triple occurrence: head, relation, tail (plus types if ``typed``)."""
    rows = []
    for key in (triples if triples is not None else kg.counts):
        cols = [_check_field(x) for x in kg.label(key)]
        if typed:
            h, _, t = key
            cols += [kg.main_type(h) or "", kg.main_type(t) or ""]
        line = "\t".join(cols)
        rows.extend([line] * (kg.counts.get(key, 1) if triples is None else 1))
    Path(path).write_text("".join(r + "\n" for r in rows), encoding="utf-8", newline="\n")


def iter_tsv(path: str | Path) -> Iterable[tuple[int, list[str]]]:
    with Path(path).open(encoding="utf-8", newline="") as fh:
        for n, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) not in (3, 5) or not all(c.strip() for c in cols[:3]):
                raise MalformedLine(n, f"expected 3 or 5 tab-separated fields, got {len(cols)}")
            yield n, cols


def import_tsv(path: str | Path) -> KnowledgeGraph:
    kg = KnowledgeGraph()
    for _, cols in iter_tsv(path):
        ht = tt = None
        if len(cols) == 5:
            ht, tt = cols[3] or None, cols[4] or None
        kg.add(cols[0], cols[1], cols[2], ht, tt)
    return kg


def export_provenance(kg: KnowledgeGraph, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for key in kg.counts:
            h, r, t = kg.label(key)
            rec = {"head": h, "relation": r, "tail": t, "count": kg.counts[key],
                   "provenance": [list(p) for p in kg.provenance.get(key, [])]}
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")

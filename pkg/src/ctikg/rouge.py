"""ROUGE-N and ROUGE-L for comparing extracted triples with references."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .errors import CTIKGError
from .ontology import TypedTriple
from .triple_parser import canonicalize, serialize

DEFAULT_NS = (1, 2, 3, 6)
_TOKEN = re.compile(r"[^\W_]+")


class InvalidN(CTIKGError, ValueError):
    pass


class EmptyInput(CTIKGError, ValueError):
    pass


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_pr(cls, precision: float, recall: float) -> "RougeScore":
        denom = precision + recall
        f1 = 0.0 if denom == 0 else 2 * precision * recall / denom
        return cls(precision, recall, f1)

    def as_dict(self) -> dict[str, float]:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1}


ZERO = RougeScore(0.0, 0.0, 0.0)


def tokenize(text: str) -> list[str]:
    """Lowercased alphanumeric runs; everything else separates tokens."""
    return _TOKEN.findall(text.lower())


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: Sequence[str], reference: Sequence[str], n: int) -> RougeScore:
    if n < 1:
        raise InvalidN(f"n must be >= 1, got {n}")
    cand = ngrams(candidate, n)
    ref = ngrams(reference, n)
    # clipped: a candidate n-gram matches at most as often as it occurs in the reference
    matched = sum((cand & ref).values())
    n_ref = sum(ref.values())
    n_cand = sum(cand.values())
    recall = matched / n_ref if n_ref else 0.0
    precision = matched / n_cand if n_cand else 0.0
    return RougeScore.from_pr(precision, recall)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence[str], reference: Sequence[str]) -> RougeScore:
    lcs = lcs_length(candidate, reference)
    recall = lcs / len(reference) if reference else 0.0
    precision = lcs / len(candidate) if candidate else 0.0
    return RougeScore.from_pr(precision, recall)


def metric_names(ns: Iterable[int] = DEFAULT_NS) -> list[str]:
    return [f"rouge-{n}" for n in ns] + ["rouge-l"]


def evaluate_extraction(
    candidate: Sequence[TypedTriple],
    reference: Sequence[TypedTriple],
    ns: Iterable[int] = DEFAULT_NS,
) -> dict[str, RougeScore]:
    """Score one example: both sides are sorted, serialised and compared as text."""
    ns = list(ns)
    if not candidate:
        return {name: ZERO for name in metric_names(ns)}
    cand = tokenize(serialize(canonicalize(list(candidate))))
    ref = tokenize(serialize(canonicalize(list(reference))))
    scores = {f"rouge-{n}": rouge_n(cand, ref, n) for n in ns}
    scores["rouge-l"] = rouge_l(cand, ref)
    return scores


def aggregate(
    scores: Sequence[Mapping[str, RougeScore]], method: str = "mean_f1"
) -> dict[str, RougeScore]:
    """Average per-example scores metric by metric.

    ``mean_f1`` averages precision, recall and F1 independently (the reported
    number is the mean F1). ``f1_of_means`` recomputes F1 from the mean
    precision and recall.
    """
    if not scores:
        raise EmptyInput("cannot aggregate an empty score list")
    if method not in ("mean_f1", "f1_of_means"):
        raise ValueError(f"unknown aggregation {method!r}")
    out: dict[str, RougeScore] = {}
    for name in scores[0]:
        k = len(scores)
        p = sum(s[name].precision for s in scores) / k
        r = sum(s[name].recall for s in scores) / k
        if method == "mean_f1":
            out[name] = RougeScore(p, r, sum(s[name].f1 for s in scores) / k)
        else:
            out[name] = RougeScore.from_pr(p, r)
    return out

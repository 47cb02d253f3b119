"""Document ingestion, token-budgeted chunking, annotation matching and splits."""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .errors import CTIKGError
from .ontology import TypedTriple

Tokenizer = Callable[[str], int]


class InvalidBudget(CTIKGError, ValueError):
    pass


class CorpusError(CTIKGError, ValueError):
    pass


@dataclass(frozen=True)
class Document:
    id: str
    text: str
    source_uri: str | None = None


@dataclass(frozen=True)
class Paragraph:
    doc_id: str
    index: int
    text: str
    token_count: int
    oversized: bool = False

    @property
    def key(self) -> str:
        return f"{self.doc_id}:{self.index}"

    def to_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "index": self.index,
            "text": self.text,
            "token_count": self.token_count,
            "oversized": self.oversized,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Paragraph":
        return cls(d["doc_id"], int(d["index"]), d["text"], int(d["token_count"]), bool(d.get("oversized", False)))


@dataclass(frozen=True)
class AnnotatedExample:
    paragraph: Paragraph
    reference_triples: tuple[TypedTriple, ...]

    def __post_init__(self) -> None:
        if not self.reference_triples:
            raise ValueError("an annotated example needs at least one triple")
        object.__setattr__(self, "reference_triples", tuple(self.reference_triples))

    @property
    def key(self) -> str:
        return self.paragraph.key

    def to_dict(self) -> dict:
        return {
            "id": self.key,
            "paragraph": self.paragraph.to_dict(),
            "triples": [t.to_dict() for t in self.reference_triples],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnnotatedExample":
        return cls(Paragraph.from_dict(d["paragraph"]), tuple(TypedTriple.from_dict(t) for t in d["triples"]))


@dataclass(frozen=True)
class DatasetSplit:
    train: list = field(default_factory=list)
    validation: list = field(default_factory=list)
    test: list = field(default_factory=list)
    seed: int = 0

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.validation), len(self.test)


# --- tokens & chunking -------------------------------------------------------


def count_tokens(text: str) -> int:
    """Approximate subword token count: ceil(words * 4 / 3).

    Real tokenizers can be plugged in wherever a ``tokenizer`` argument is
    accepted; this heuristic only has to be deterministic and monotone in
    the word count.
    """
    words = len(text.split())
    return (4 * words + 2) // 3


_BLANK_LINE = re.compile(r"\n[ \t\r\f\v]*\n")
_SENTENCE_END = re.compile(r"(?<=[.!?])\s+")


def natural_paragraphs(text: str) -> list[str]:
    parts = (p.strip() for p in _BLANK_LINE.split(text.replace("\r\n", "\n")))
    return [p for p in parts if p]


def split_sentences(text: str) -> list[str]:
    return [s for s in (p.strip() for p in _SENTENCE_END.split(text)) if s]


def _pack(pieces: Sequence[str], sep: str, budget: int, tok: Tokenizer) -> list[str]:
    chunks: list[str] = []
    current: list[str] = []
    for piece in pieces:
        if current and tok(sep.join(current + [piece])) > budget:
            chunks.append(sep.join(current))
            current = []
        current.append(piece)
    if current:
        chunks.append(sep.join(current))
    return chunks


def chunk_document(
    doc: Document, max_tokens: int, tokenizer: Tokenizer = count_tokens
) -> list[Paragraph]:
    """Split a document into paragraphs of at most ``max_tokens`` tokens.

    Natural paragraphs (blank-line separated) are packed greedily. A natural
    paragraph that alone exceeds the budget is flushed on its own and split on
    sentence boundaries; a single sentence over budget becomes one chunk
    flagged ``oversized``.
    """
    if max_tokens < 1:
        raise InvalidBudget(f"max_tokens must be >= 1, got {max_tokens}")

    texts: list[tuple[str, bool]] = []
    run: list[str] = []

    def flush() -> None:
        texts.extend((c, False) for c in _pack(run, "\n\n", max_tokens, tokenizer))
        run.clear()

    for para in natural_paragraphs(doc.text):
        if tokenizer(para) <= max_tokens:
            run.append(para)
            continue
        flush()
        for chunk in _pack(split_sentences(para), " ", max_tokens, tokenizer):
            texts.append((chunk, tokenizer(chunk) > max_tokens))
    flush()

    return [
        Paragraph(doc.id, i, text, tokenizer(text), oversized)
        for i, (text, oversized) in enumerate(texts)
    ]


# --- annotation matching ----------------------------------------------------


def _mentions(text_lower: str, surface: str) -> bool:
    return surface.lower() in text_lower


def match_annotations(
    paragraphs: Iterable[Paragraph], triples: Iterable[TypedTriple]
) -> list[AnnotatedExample]:
    """Attach each triple to every paragraph mentioning both its endpoints.

    Triples carrying a provenance document id only match paragraphs of that
    document. Paragraphs without any matched triple are dropped.
    """
    triples = list(triples)
    out: list[AnnotatedExample] = []
    for para in paragraphs:
        low = para.text.lower()
        matched = []
        for t in triples:
            if t.provenance and t.provenance[0] is not None and t.provenance[0] != para.doc_id:
                continue
            if _mentions(low, t.head) and _mentions(low, t.tail):
                matched.append(
                    TypedTriple(t.head, t.relation, t.tail, t.head_type, t.tail_type,
                                provenance=(para.doc_id, para.index))
                )
        if matched:
            out.append(AnnotatedExample(para, tuple(matched)))
    return out


# --- splitting --------------------------------------------------------------


def apportion(n: int, ratio: Sequence[int]) -> list[int]:
    """Largest-remainder apportionment of ``n`` items over ``ratio`` parts.

    Each part gets floor(n * r / total); leftover items go to the parts with
    the largest fractional remainders, earlier parts winning ties.
    """
    total = sum(ratio)
    base = [n * r // total for r in ratio]
    remainders = [n * r % total for r in ratio]
    leftover = n - sum(base)
    order = sorted(range(len(ratio)), key=lambda i: (-remainders[i], i))
    for i in order[:leftover]:
        base[i] += 1
    return base


def split_dataset(examples: Sequence, ratio: Sequence[int] = (80, 16, 4), seed: int = 0) -> DatasetSplit:
    if len(ratio) != 3 or any(r <= 0 for r in ratio) or sum(ratio) != 100:
        raise ValueError(f"ratio must be three positive integers summing to 100, got {ratio}")
    items = list(examples)
    random.Random(seed).shuffle(items)
    n_train, n_valid, _ = apportion(len(items), ratio)
    return DatasetSplit(
        train=items[:n_train],
        validation=items[n_train:n_train + n_valid],
        test=items[n_train + n_valid:],
        seed=seed,
    )


# --- loading ----------------------------------------------------------------


def load_documents(path: str | Path) -> list[Document]:
    """Read a directory of ``*.txt`` files or a JSON-Lines file of documents."""
    path = Path(path)
    docs: list[Document] = []
    if path.is_dir():
        for f in sorted(path.glob("*.txt")):
            docs.append(Document(f.stem, f.read_text(encoding="utf-8"), f.as_uri()))
    elif path.is_file():
        with path.open(encoding="utf-8") as fh:
            for n, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    docs.append(Document(str(rec["id"]), rec["text"], rec.get("source_uri")))
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise CorpusError(f"{path}:{n}: bad document record ({exc})") from exc
    else:
        raise CorpusError(f"corpus path does not exist: {path}")

    seen: set[str] = set()
    for d in docs:
        if d.id in seen:
            raise CorpusError(f"duplicate document id {d.id!r}")
        seen.add(d.id)
    return docs


def load_annotations(path: str | Path) -> list[TypedTriple]:
    """JSON-Lines of triples; ``doc_id`` (or ``provenance``) ties a triple to a document."""
    out: list[TypedTriple] = []
    with Path(path).open(encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if "doc_id" in rec and "provenance" not in rec:
                    rec = {**rec, "provenance": [rec["doc_id"], None]}
                out.append(TypedTriple.from_dict(rec))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise CorpusError(f"{path}:{n}: bad annotation record ({exc})") from exc
    return out

import json
import math

import pytest
from hypothesis import given, settings, strategies as st

from ctikg.corpus import (
    AnnotatedExample,
    CorpusError,
    Document,
    InvalidBudget,
    Paragraph,
    apportion,
    chunk_document,
    count_tokens,
    load_annotations,
    load_documents,
    match_annotations,
    natural_paragraphs,
    split_dataset,
)
from ctikg.ontology import TypedTriple


def _words(n, prefix="w"):
    return " ".join(f"{prefix}{i}" for i in range(n))


def test_token_heuristic():
    assert count_tokens("") == 0
    assert count_tokens("one two three") == 4
    assert count_tokens(_words(600)) == 800


@given(st.integers(0, 5000))
def test_token_heuristic_matches_ceiling(n):
    text = " ".join(["x"] * n)
    assert count_tokens(text) == math.ceil(n * 4 / 3)


def test_empty_document_has_no_chunks():
    assert chunk_document(Document("d", ""), 100) == []


def test_greedy_packing_of_equal_paragraphs():
    # 75 words -> exactly 100 tokens each
    paras = [_words(75, f"p{i}_") for i in range(10)]
    doc = Document("d", "\n\n".join(paras))
    chunks = chunk_document(doc, 400)
    assert [c.text.count("\n\n") + 1 for c in chunks] == [4, 4, 2]
    assert all(c.token_count <= 400 for c in chunks)


def test_long_paragraph_is_split_on_sentences():
    sentences = [_words(30, f"s{i}_") + "." for i in range(30)]  # 900 words, 1200 tokens
    doc = Document("d", " ".join(sentences))
    chunks = chunk_document(doc, 1000)
    assert len(chunks) >= 2
    assert all(c.token_count <= 1000 and not c.oversized for c in chunks)


def test_single_oversized_sentence_is_flagged():
    doc = Document("d", _words(100) + ".")
    chunks = chunk_document(doc, 50)
    assert len(chunks) == 1 and chunks[0].oversized


def test_invalid_budget():
    with pytest.raises(InvalidBudget):
        chunk_document(Document("d", "x"), 0)


_para = st.lists(st.sampled_from(["alpha", "beta", "gamma.", "delta!"]), min_size=1, max_size=40).map(" ".join)


@settings(max_examples=60)
@given(st.lists(_para, min_size=1, max_size=8), st.integers(5, 60), st.integers(5, 60))
def test_chunking_properties(paras, b1, b2):
    doc = Document("d", "\n\n".join(paras))
    lo, hi = sorted((b1, b2))
    small, large = chunk_document(doc, lo), chunk_document(doc, hi)
    assert len(small) >= len(large)
    # loss-free and order-preserving on the word level
    words = doc.text.split()
    assert [w for c in small for w in c.text.split()] == words
    assert [c.index for c in small] == list(range(len(small)))
    for c in small:
        assert c.token_count <= lo or c.oversized


def test_match_annotations_examples():
    para = Paragraph("d", 0, "SpyNote is a Trojan targeting Android", 8)
    hit = TypedTriple("SpyNote", "isA", "Trojan")
    miss = TypedTriple("Pegasus", "targets", "iOS")
    out = match_annotations([para], [hit, miss])
    assert len(out) == 1 and [t.head for t in out[0].reference_triples] == ["SpyNote"]
    assert out[0].reference_triples[0].provenance == ("d", 0)
    assert match_annotations([para], [miss]) == []


def test_match_annotations_exhaustive_oracle():
    paras = [
        Paragraph("d", 0, "Adwind targets the US energy sector.", 1),
        Paragraph("d", 1, "SpyNote uses Netflix branding on Android.", 1),
        Paragraph("e", 0, "Adwind and SpyNote both target Android users in the US.", 1),
    ]
    triples = [
        TypedTriple("Adwind", "targets", "US"),
        TypedTriple("SpyNote", "targets", "Android"),
        TypedTriple("SpyNote", "uses", "Netflix"),
        TypedTriple("Adwind", "targets", "Android"),
        TypedTriple("Pegasus", "targets", "iOS"),
    ]
    expected = {"d:0": {0}, "d:1": {1, 2}, "e:0": {0, 1, 3}}
    got = {
        ex.key: {i for i, t in enumerate(triples) for r in ex.reference_triples if r == t}
        for ex in match_annotations(paras, triples)
    }
    assert got == expected


def test_match_annotations_respects_document_id():
    paras = [Paragraph("a", 0, "Adwind targets US", 3), Paragraph("b", 0, "Adwind targets US", 3)]
    t = TypedTriple("Adwind", "targets", "US", provenance=("b", None))
    assert [e.key for e in match_annotations(paras, [t])] == ["b:0"]


_words_st = st.sampled_from(["adwind", "us", "spynote", "android", "trojan", "rat", "bank"])


@settings(max_examples=60)
@given(st.lists(st.lists(_words_st, min_size=1, max_size=8).map(" ".join), min_size=1, max_size=5),
       st.lists(st.tuples(_words_st, _words_st), min_size=1, max_size=6))
def test_match_never_attaches_absent_endpoints(texts, pairs):
    paras = [Paragraph("d", i, t, 1) for i, t in enumerate(texts)]
    triples = [TypedTriple(h, "uses", t) for h, t in pairs]
    for ex in match_annotations(paras, triples):
        low = ex.paragraph.text.lower()
        assert all(t.head.lower() in low and t.tail.lower() in low for t in ex.reference_triples)


def test_split_counts():
    assert split_dataset(range(718)).sizes() == (574, 115, 29)
    assert split_dataset([]).sizes() == (0, 0, 0)
    assert split_dataset(range(100)).sizes() == (80, 16, 4)


def test_split_is_deterministic_and_rejects_bad_ratio():
    a = split_dataset(range(50), seed=3)
    b = split_dataset(range(50), seed=3)
    assert a == b
    with pytest.raises(ValueError):
        split_dataset(range(10), (80, 20, 0))
    with pytest.raises(ValueError):
        split_dataset(range(10), (50, 30, 30))


@given(st.integers(0, 2000), st.integers(0, 10_000))
def test_split_partitions(n, seed):
    s = split_dataset(range(n), seed=seed)
    merged = s.train + s.validation + s.test
    assert sorted(merged) == list(range(n))


def _apportion_oracle(n, ratio):
    quotas = [n * r / sum(ratio) for r in ratio]
    base = [math.floor(q) for q in quotas]
    order = sorted(range(len(ratio)), key=lambda i: (-(quotas[i] - base[i]), i))
    for i in order[: n - sum(base)]:
        base[i] += 1
    return base


@given(st.integers(0, 5000), st.lists(st.integers(1, 100), min_size=1, max_size=5))
def test_apportion_matches_float_oracle(n, ratio):
    got = apportion(n, ratio)
    assert sum(got) == n
    # the integer implementation agrees with the float reference away from exact ties
    oracle = _apportion_oracle(n, ratio)
    assert all(abs(a - b) <= 1 for a, b in zip(got, oracle))
    if n % sum(ratio) == 0:
        assert got == [n * r // sum(ratio) for r in ratio]


def test_example_roundtrip():
    ex = AnnotatedExample(Paragraph("d", 1, "text", 2), (TypedTriple("a", "isA", "b"),))
    assert AnnotatedExample.from_dict(json.loads(json.dumps(ex.to_dict()))) == ex
    with pytest.raises(ValueError):
        AnnotatedExample(Paragraph("d", 1, "text", 2), ())


def test_load_documents_dir_and_jsonl(tmp_path):
    (tmp_path / "b.txt").write_text("second")
    (tmp_path / "a.txt").write_text("first")
    docs = load_documents(tmp_path)
    assert [d.id for d in docs] == ["a", "b"]
    f = tmp_path / "docs.jsonl"
    f.write_text('{"id": "x", "text": "t"}\n\n{"id": "y", "text": "u", "source_uri": "http://e"}\n')
    assert [(d.id, d.source_uri) for d in load_documents(f)] == [("x", None), ("y", "http://e")]
    f.write_text('{"id": "x", "text": "t"}\n{"id": "x", "text": "u"}\n')
    with pytest.raises(CorpusError):
        load_documents(f)
    with pytest.raises(CorpusError):
        load_documents(tmp_path / "missing")


def test_load_annotations(tmp_path):
    f = tmp_path / "ann.jsonl"
    f.write_text('{"doc_id": "d", "head": "A", "relation": "isA", "tail": "B", "head_type": "Malware"}\n')
    (t,) = load_annotations(f)
    assert t.provenance == ("d", None)
    assert str(t.head_type) == "Malware"


def test_natural_paragraphs_handle_whitespace_lines():
    assert natural_paragraphs("a\n  \nb\n\n\nc") == ["a", "b", "c"]

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ctikg.ontology import EntityType as E
from ctikg.ontology import TypedTriple
from ctikg.postprocess import (
    DEFAULT_PIPELINE,
    POINTWISE_RULES,
    FilterConfigError,
    FilterRule,
    filter_discovered_in_requires_date,
    filter_non_named,
    filter_numeric_subjects,
    filter_ontology,
    filter_rare_malware,
    is_named_entity,
    looks_like_date,
    rules_from_config,
    run_pipeline,
)
from ctikg.triple_parser import parse_triples


def P(text):
    (t,) = parse_triples(text).triples
    return t


def test_ontology_rule():
    kept, rep = filter_ontology([P("[A, hostedOn, B]"), P("[Adwind[Malware], targets, US[Location]]")])
    assert [t.head for t in kept] == ["Adwind"]
    assert (rep.input_count, rep.removed_count) == (2, 1)
    assert rep.sample_removed == ["[A, hostedOn, B]"]


def test_empty_input_all_rules():
    for rule in DEFAULT_PIPELINE:
        kept, rep = rule.apply([])
        assert kept == [] and rep.input_count == 0 and rep.removed_count == 0


def test_discovered_in():
    ok = P("[Operation Emmental[ThreatActor], discoveredIn, July 22, 2014[Time]]")
    bad = P("[X[Malware], discoveredIn, recently[Time]]")
    year = P("[X[Malware], discoveredIn, 2019[Time]]")
    other = P("[X[Malware], targets, recently[Location]]")
    kept, rep = filter_discovered_in_requires_date([ok, bad, year, other])
    assert kept == [ok, year, other]
    assert rep.removed_count == 1


DATES = ["2019", "in 2014", "July 22, 2014", "22 July", "Sept. 2019", "March 3rd", "3rd of March",
         "12/05/2020", "12.05.2020", "1-2-2021", "December 2015", "early 2016"]
NOT_DATES = ["recently", "last week", "yesterday", "version 12", "port 443", "Tuesday", "the summer",
             "12345", "May be", "a few days ago", "2.5", "Q"]


@pytest.mark.parametrize("text", DATES)
def test_date_strings(text):
    assert looks_like_date(text)


@pytest.mark.parametrize("text", NOT_DATES)
def test_non_date_strings(text):
    assert not looks_like_date(text)


def test_numeric_subjects():
    a = P("[124, indicates, Android]")
    b = P("[Adwind 2, targets, US]")
    c = P("[+44113320****, indicates, Phone Numbers]")
    kept, rep = filter_numeric_subjects([a, b, c])
    assert kept == [b] and rep.removed_count == 2


def test_non_named():
    bad = TypedTriple("the malware", "targets", "US", E.MALWARE, E.LOCATION)
    good = TypedTriple("FakeSpy", "targets", "Android", E.MALWARE, E.OPERATING_SYSTEM)
    plain = TypedTriple("the bank", "uses", "a portal", E.ORGANIZATION, E.APPLICATION)
    kept, _ = filter_non_named([bad, good, plain])
    assert kept == [good, plain]


NAMED = ["FakeSpy", "Adwind", "APT28", "Lazarus Group", "Operation Emmental", "jRAT", "njw0rm",
         "DarkHotel", "Emotet", "TrickBot", "WannaCry", "Fancy Bear", "FIN7", "The Dukes", "xDedic"]
NOT_NAMED = ["the malware", "a trojan", "an attacker", "this backdoor", "it", "the implant", "malware",
             "ransomware", "hackers", "the group", "a threat actor", "cybercriminals", "this campaign",
             "an APT group", "spyware"]


def test_named_list_size():
    assert len(NAMED) + len(NOT_NAMED) == 30


@pytest.mark.parametrize("text", NAMED)
def test_named(text):
    assert is_named_entity(text)


@pytest.mark.parametrize("text", NOT_NAMED)
def test_not_named(text):
    assert not is_named_entity(text)


def mal(head, tail="US", doc=None):
    return TypedTriple(head, "targets", tail, E.MALWARE, E.LOCATION, doc)


def test_rare_malware_threshold():
    corpus = [mal("X"), mal("X", "UK")] + [mal("Adwind", f"L{i}") for i in range(7)]
    kept, rep = filter_rare_malware(corpus, 5)
    assert all(t.head == "Adwind" for t in kept) and len(kept) == 7
    assert rep.removed_count == 2


def test_rare_malware_case_insensitive():
    corpus = [mal("adwind", f"L{i}") for i in range(3)] + [mal("ADWIND", f"M{i}") for i in range(2)]
    kept, _ = filter_rare_malware(corpus, 5)
    assert len(kept) == 5


def test_rare_malware_document_unit():
    corpus = [mal("X", f"L{i}", ("d1", i)) for i in range(6)]
    assert filter_rare_malware(corpus, 2)[0] == []
    assert len(filter_rare_malware(corpus, 2, unit="triples")[0]) == 6


def test_rare_malware_bad_threshold():
    with pytest.raises(FilterConfigError):
        filter_rare_malware([], 0)


NAMES = ["A", "B", "C", "D"]


@st.composite
def corpus(draw):
    out = []
    for _ in range(draw(st.integers(0, 25))):
        h = draw(st.sampled_from(NAMES))
        t = draw(st.sampled_from(NAMES + ["US", "UK"]))
        ht = draw(st.sampled_from([E.MALWARE, E.THREAT_ACTOR]))
        tt = draw(st.sampled_from([E.MALWARE, E.LOCATION]))
        out.append(TypedTriple(h, "uses", t, ht, tt))
    return out


def _rare_oracle(ts, k):
    """Count-and-filter repeated to a fixpoint, written as plainly as possible."""
    ts = list(ts)
    while True:
        malware = set()
        for t in ts:
            if t.head_type == E.MALWARE:
                malware.add(t.head.lower())
            if t.tail_type == E.MALWARE:
                malware.add(t.tail.lower())
        count = {m: 0 for m in malware}
        for t in ts:
            for s in (t.head.lower(), t.tail.lower()):
                if s in count:
                    count[s] += 1
        nxt = [t for t in ts
               if not (t.head_type == E.MALWARE and count[t.head.lower()] < k)
               and not (t.tail_type == E.MALWARE and count[t.tail.lower()] < k)]
        if len(nxt) == len(ts):
            return ts
        ts = nxt


@given(corpus(), st.integers(1, 6))
def test_rare_malware_oracle(ts, k):
    assert filter_rare_malware(ts, k)[0] == _rare_oracle(ts, k)


NOISY = [
    "[Adwind[Malware], targets, US[Location]]",
    "[Adwind[Malware], uses, Java[Application]]",
    "[Adwind[Malware], hostedOn, a server[Application]]",
    "[the implant[Malware], targets, Windows[OperatingSystem]]",
    "[443[Indicator], indicates, Adwind[Malware]]",
    "[Adwind[Malware], discoveredIn, first report[Time]]",
    "[Adwind[Malware], discoveredIn, 2015[Time]]",
    "[QuillDrop[Malware], targets, UK[Location]]",
    "[APT1[ThreatActor], uses, Adwind[Malware]]",
    "[Adwind[Malware], hasAuthor, Windows[OperatingSystem]]",
    "[Adwind[Malware], targets, Android[OperatingSystem]]",
    "[Adwind[Malware], targets, banks[Organization]]",
]


def noisy():
    return [P(s) for s in NOISY]


@given(corpus(), st.sampled_from(sorted(POINTWISE_RULES) + ["rare_malware"]))
def test_filters_contract_and_are_idempotent(ts, name):
    rule = FilterRule(name, {"min_mentions": 2} if name == "rare_malware" else {})
    once, _ = rule.apply(ts)
    assert all(t in ts for t in once)
    twice, rep = rule.apply(once)
    assert twice == once and rep.removed_count == 0


@pytest.mark.parametrize("a", sorted(POINTWISE_RULES))
@pytest.mark.parametrize("b", sorted(POINTWISE_RULES))
def test_pointwise_rules_commute(a, b):
    ab, _ = run_pipeline(noisy(), [FilterRule(a), FilterRule(b)])
    ba, _ = run_pipeline(noisy(), [FilterRule(b), FilterRule(a)])
    assert ab == ba


def test_rare_malware_is_order_sensitive():
    # before the ontology rule removes the hostedOn triple, Adwind has one mention more
    ts = [P("[Adwind[Malware], targets, US[Location]]"), P("[Adwind[Malware], hostedOn, x[Application]]")]
    late, _ = run_pipeline(ts, [FilterRule("ontology"), FilterRule("rare_malware", {"min_mentions": 2})])
    early, _ = run_pipeline(ts, [FilterRule("rare_malware", {"min_mentions": 2}), FilterRule("ontology")])
    assert late == [] and len(early) == 1


def test_pipeline_matches_manual_composition():
    rules = list(DEFAULT_PIPELINE[:-1]) + [FilterRule("rare_malware", {"min_mentions": 3})]
    kept, report = run_pipeline(noisy(), rules)
    manual = noisy()
    manual, _ = filter_ontology(manual)
    manual, _ = filter_discovered_in_requires_date(manual)
    manual, _ = filter_numeric_subjects(manual)
    manual, _ = filter_non_named(manual)
    manual, _ = filter_rare_malware(manual, 3)
    assert kept == manual
    assert [r.name for r in report.rules] == [r.name for r in rules]
    heads = {t.head for t in kept}
    assert heads == {"Adwind", "APT1"}
    assert report.final_count == len(kept)


def test_report_counting():
    _, report = run_pipeline(noisy(), DEFAULT_PIPELINE)
    for cur, nxt in zip(report.rules, report.rules[1:]):
        assert cur.input_count - cur.removed_count == nxt.input_count
    last = report.rules[-1]
    assert last.input_count - last.removed_count == report.final_count
    assert "final triples" in report.to_table()
    assert '"rules"' in report.to_json()


def test_empty_rule_list_is_identity():
    kept, report = run_pipeline(noisy(), [])
    assert kept == noisy() and report.rules == [] and report.final_count == len(NOISY)


def test_rules_from_config():
    rules = rules_from_config([{"name": "ontology"}, {"name": "rare_malware", "min_mentions": 2}])
    assert rules[1] == FilterRule("rare_malware", {"min_mentions": 2})
    with pytest.raises(FilterConfigError):
        rules_from_config([{"name": "nope"}])
    with pytest.raises(FilterConfigError):
        rules_from_config([{"min_mentions": 2}])

"""Regenerate the bundled demo corpus, annotations and replay log.

The replay log stands in for a recorded model session: each paragraph of the
demo corpus maps to a fixed raw output. Rerun this after changing a prompt
template, since replay keys hash the rendered prompt.

    python tools/make_demo.py
"""

from __future__ import annotations

import json
from pathlib import Path

from ctikg import corpus, prompting
from ctikg.llm_client import CompletionRecord, GenerationParams, ReplayStore
from ctikg.prompting import render_prompt

DEMO = Path(__file__).resolve().parents[1] / "src" / "ctikg" / "data" / "demo"
TEMPLATE = "typed_oneshot"
MAX_TOKENS = 40
PARAMS = GenerationParams(decoding="greedy")
STAMP = "2024-01-01T00:00:00+00:00"

DOCS = {
    "nightvole": [
        "NightVole is a remote access trojan, or RAT, that targets Windows machines at "
        "banks in Germany. Researchers first saw it in March 2019.",
        "The NightVole operators rely on phishing mail with a malicious document that "
        "exploits CVE-2017-11882. Once running, the implant starts keylogging.",
        "Analysts attribute NightVole to the GreyHeron group. The malware also beacons "
        "over port 443 to its command server.",
    ],
    "greyheron": [
        "GreyHeron, also tracked as Heron Group, is a threat actor that targets banks "
        "in Germany and the US through phishing campaigns.",
        "GreyHeron uses NightVole on Windows hosts and SpyRat on Android phones. "
        "Heron Group has hit banks on both continents.",
        "The report does not list further indicators for GreyHeron beyond those tied "
        "to NightVole and SpyRat.",
    ],
    "spyrat": [
        "SpyRat is an Android RAT and trojan first reported in 2020. It targets bank "
        "customers in the US and is written by GreyHeron.",
        "SpyRat is a variant of NightVole ported to Android. Like its parent it uses "
        "keylogging and spreads through phishing, and it exploits CVE-2017-11882 in lures.",
        "A separate dropper, QuillDrop, is a trojan that targets Windows. It appears "
        "only in this report.",
    ],
}

M, MT, TA = "Malware", "MalwareType", "ThreatActor"

OUTPUTS = {
    "nightvole:0": (
        "[NightVole[Malware], isA, RAT[MalwareType]], [NightVole[Malware], isA, trojan[MalwareType]], "
        "[NightVole[Malware], targets, Windows[OperatingSystem]], [NightVole[Malware], targets, banks[Organization]], "
        "[NightVole[Malware], targets, Germany[Location]], [NightVole[Malware], discoveredIn, March 2019[Time]]"
    ),
    "nightvole:1": (
        "1. NightVole[Malware], uses, phishing[AttackPattern]\n"
        "2. NightVole[Malware], exploits, CVE-2017-11882[Indicator]\n"
        "3. NightVole[Malware], uses, keylogging[AttackPattern]\n"
        "4. the implant[Malware], uses, keylogging[AttackPattern]"
    ),
    "nightvole:2": (
        "[NightVole[Malware], hasAuthor, GreyHeron[ThreatActor]]\n"
        "[443[Indicator], indicates, NightVole[Malware]]\n"
        "[NightVole[Malware], hasAuthor, Windows[OperatingSystem]]"
    ),
    "greyheron:0": (
        "[GreyHeron[ThreatActor], hasAlias, Heron Group[ThreatActor]], "
        "[GreyHeron[ThreatActor], targets, banks[Organization]], [GreyHeron[ThreatActor], targets, Germany[Location]], "
        "[GreyHeron[ThreatActor], targets, US[Location]], [GreyHeron[ThreatActor], uses, phishing[AttackPattern]]"
    ),
    "greyheron:1": (
        "[GreyHeron[ThreatActor], uses, NightVole[Malware]], [GreyHeron[ThreatActor], uses, SpyRat[Malware]], "
        "[NightVole[Malware], targets, Windows[OperatingSystem]], [SpyRat[Malware], targets, Android[OperatingSystem]], "
        "[Heron Group[ThreatActor], targets, banks[Organization]]"
    ),
    "greyheron:2": "The report does not list further indicators.",
    "spyrat:0": (
        "[SpyRat[Malware], isA, RAT[MalwareType]], [SpyRat[Malware], isA, trojan[MalwareType]], "
        "[SpyRat[Malware], discoveredIn, 2020[Time]], [SpyRat[Malware], targets, US[Location]], "
        "[SpyRat[Malware], targets, banks[Organization]], [SpyRat[Malware], hasAuthor, GreyHeron[ThreatActor]], "
        "[SpyRat[Malware], discoveredIn, first report[Time]]"
    ),
    "spyrat:1": (
        "['SpyRat[Malware]', 'variantOf', 'NightVole[Malware]'], ['SpyRat[Malware]', 'uses', 'keylogging[AttackPattern]'], "
        "['SpyRat[Malware]', 'uses', 'phishing[AttackPattern]'], ['SpyRat[Malware]', 'exploits', 'CVE-2017-11882[Indicator]'], "
        "['SpyRat[Malware]', 'targets', 'Android[OperatingSystem]']"
    ),
    "spyrat:2": "[QuillDrop[Malware], isA, trojan[MalwareType]], [QuillDrop[Malware], targets, Windows[OperatingSystem]]",
}

ANNOTATIONS = [
    ("nightvole", "NightVole", M, "isA", "RAT", MT),
    ("nightvole", "NightVole", M, "targets", "Windows", "OperatingSystem"),
    ("nightvole", "NightVole", M, "targets", "banks", "Organization"),
    ("nightvole", "NightVole", M, "discoveredIn", "March 2019", "Time"),
    ("nightvole", "NightVole", M, "uses", "phishing", "AttackPattern"),
    ("nightvole", "NightVole", M, "exploits", "CVE-2017-11882", "Indicator"),
    ("nightvole", "NightVole", M, "hasAuthor", "GreyHeron", TA),
    ("greyheron", "GreyHeron", TA, "hasAlias", "Heron Group", TA),
    ("greyheron", "GreyHeron", TA, "targets", "banks", "Organization"),
    ("greyheron", "GreyHeron", TA, "uses", "SpyRat", M),
    ("spyrat", "SpyRat", M, "isA", "RAT", MT),
    ("spyrat", "SpyRat", M, "variantOf", "NightVole", M),
    ("spyrat", "SpyRat", M, "hasAuthor", "GreyHeron", TA),
]


def main() -> None:
    DEMO.mkdir(parents=True, exist_ok=True)
    with (DEMO / "docs.jsonl").open("w", encoding="utf-8", newline="\n") as fh:
        for doc_id, paras in DOCS.items():
            fh.write(json.dumps({"id": doc_id, "text": "\n\n".join(paras)}) + "\n")
    with (DEMO / "annotations.jsonl").open("w", encoding="utf-8", newline="\n") as fh:
        for doc_id, h, ht, r, t, tt in ANNOTATIONS:
            rec = {"doc_id": doc_id, "head": h, "head_type": ht, "relation": r, "tail": t, "tail_type": tt}
            fh.write(json.dumps(rec) + "\n")

    template = prompting.get_template(TEMPLATE)
    replay = DEMO / "replay.jsonl"
    replay.unlink(missing_ok=True)
    store = ReplayStore(replay)
    for doc in corpus.load_documents(DEMO / "docs.jsonl"):
        for para in corpus.chunk_document(doc, MAX_TOKENS):
            prompt = render_prompt(template, para.text)
            store.add(CompletionRecord(prompt, PARAMS, OUTPUTS[para.key], "replay", STAMP))
    print(f"wrote {len(store)} replay records to {replay}")


if __name__ == "__main__":
    main()

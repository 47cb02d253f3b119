"""Command-line pipeline: every stage reads and writes files under one output directory.

Each stage directory carries a ``manifest.json`` with the hashes of its
inputs, of the configuration it ran with and of the files it produced. A stage
whose inputs and configuration are unchanged is skipped unless ``--force``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np

from . import __version__
from . import corpus, kg as kgmod, linkpred, postprocess, prompting, rouge
from .errors import CTIKGError
from .llm_client import (
    Endpoint,
    GenerationParams,
    HttpBackend,
    RecordingBackend,
    ReplayBackend,
    ReplayStore,
    batch_extract,
)
from .ontology import OntologySchema, TypedTriple
from .triple_parser import parse_triples

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("ctikg")


class ConfigError(CTIKGError, ValueError):
    pass


class MissingInput(CTIKGError, FileNotFoundError):
    pass


# --- configuration ----------------------------------------------------------

SCHEMA: dict[str, set[str] | None] = {
    "seed": None,
    "out": None,
    "corpus": {"documents", "annotations", "max_tokens", "split"},
    "extract": {"template", "template_file", "backend", "replay", "record", "endpoint", "model",
                "api_key_env", "timeout", "max_retries", "capabilities", "concurrency"},
    "generation": set(GenerationParams.__dataclass_fields__),
    "filter": {"rules", "schema"},
    "rouge": {"ns", "aggregation", "candidates", "references", "label"},
    "kg": {"typed", "split"},
    "lp": set(linkpred.TrainConfig.__dataclass_fields__) | {"setting", "ranks"},
}
PATH_KEYS = {
    "corpus": ("documents", "annotations"),
    "extract": ("template_file", "replay", "record"),
    "filter": ("schema",),
    "rouge": ("candidates", "references"),
    "lp": ("ranks",),
}


def load_config(path: str | Path | None) -> tuple[dict[str, Any], Path]:
    """Read and validate a TOML config; relative paths resolve against its directory."""
    if path is None:
        return {}, Path.cwd()
    path = Path(path)
    if not path.is_file():
        raise MissingInput(f"config file not found: {path}")
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    validate_config(data)
    base = path.resolve().parent
    for section, keys in PATH_KEYS.items():
        for key in keys:
            value = data.get(section, {}).get(key)
            if value is not None:
                data[section][key] = str((base / value).resolve())
    if "out" in data:
        data["out"] = str((base / data["out"]).resolve())
    return data, base


def validate_config(data: Mapping[str, Any]) -> None:
    for key, value in data.items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        allowed = SCHEMA[key]
        if allowed is None:
            continue
        if not isinstance(value, Mapping):
            raise ConfigError(f"[{key}] must be a table")
        unknown = set(value) - allowed
        if unknown:
            raise ConfigError(f"unknown keys in [{key}]: {sorted(unknown)}")


def _sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def file_hash(path: Path) -> str:
    """Content hash of a file, or of every file under a directory."""
    if path.is_dir():
        h = hashlib.sha256()
        for f in sorted(p for p in path.rglob("*") if p.is_file()):
            h.update(f.relative_to(path).as_posix().encode())
            h.update(b"\0")
            h.update(f.read_bytes())
        return h.hexdigest()
    return _sha256_bytes(path.read_bytes())


def _json_dump(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8", newline="\n")


def _write_jsonl(path: Path, records) -> None:
    _write(path, "".join(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n" for r in records))


def _read_jsonl(path: Path) -> list[dict]:
    out = []
    with path.open(encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if line.strip():
                try:
                    out.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise CTIKGError(f"{path}:{n}: invalid JSON ({exc})") from exc
    return out


# --- stage runner -----------------------------------------------------------


@dataclass
class Context:
    config: dict[str, Any]
    out: Path
    seed: int
    force: bool = False

    def section(self, name: str) -> dict[str, Any]:
        return dict(self.config.get(name, {}))

    def stage_dir(self, name: str) -> Path:
        return self.out / name


def run_stage(ctx: Context, name: str, inputs: Mapping[str, Path | None], settings: Mapping[str, Any],
              body: Callable[[Path], list[str]]) -> dict:
    """Run ``body`` unless the manifest shows identical inputs and settings."""
    present = {k: Path(v) for k, v in inputs.items() if v is not None}
    for key, p in present.items():
        if not p.exists():
            raise MissingInput(f"{name}: input {key!r} not found at {p}")
    stage_dir = ctx.stage_dir(name)
    manifest_path = stage_dir / "manifest.json"
    manifest = {
        "stage": name,
        "inputs": {k: file_hash(p) for k, p in sorted(present.items())},
        "config_hash": _sha256_bytes(json.dumps(settings, sort_keys=True, default=str).encode()),
        "versions": {"ctikg": __version__, "numpy": np.__version__},
    }
    if not ctx.force and manifest_path.exists():
        old = json.loads(manifest_path.read_text(encoding="utf-8"))
        outputs = old.get("outputs", {})
        if (
            all(old.get(k) == manifest[k] for k in ("inputs", "config_hash", "versions"))
            and all((stage_dir / f).exists() and file_hash(stage_dir / f) == h for f, h in outputs.items())
        ):
            log.info("%s: up to date, skipped", name)
            return {**old, "skipped": True}
    stage_dir.mkdir(parents=True, exist_ok=True)
    produced = body(stage_dir)
    manifest["outputs"] = {f: file_hash(stage_dir / f) for f in sorted(produced)}
    _write(manifest_path, _json_dump(manifest))
    log.info("%s: wrote %s", name, ", ".join(sorted(produced)))
    return {**manifest, "skipped": False}


# --- stages -----------------------------------------------------------------


def stage_chunk(ctx: Context) -> dict:
    cfg = ctx.section("corpus")
    if "documents" not in cfg:
        raise ConfigError("[corpus] documents is required")
    docs_path = Path(cfg["documents"])
    ann_path = Path(cfg["annotations"]) if cfg.get("annotations") else None
    max_tokens = int(cfg.get("max_tokens", 512))
    ratio = tuple(cfg.get("split", (80, 16, 4)))

    def body(d: Path) -> list[str]:
        paragraphs = [p for doc in corpus.load_documents(docs_path) for p in corpus.chunk_document(doc, max_tokens)]
        _write_jsonl(d / "paragraphs.jsonl", (p.to_dict() for p in paragraphs))
        files = ["paragraphs.jsonl"]
        if ann_path is not None:
            examples = corpus.match_annotations(paragraphs, corpus.load_annotations(ann_path))
            _write_jsonl(d / "annotated.jsonl", (e.to_dict() for e in examples))
            split = corpus.split_dataset(examples, ratio, ctx.seed)
            for part in ("train", "validation", "test"):
                _write_jsonl(d / f"{part}.jsonl", (e.to_dict() for e in getattr(split, part)))
            files += ["annotated.jsonl", "train.jsonl", "validation.jsonl", "test.jsonl"]
        return files

    settings = {"max_tokens": max_tokens, "split": ratio, "seed": ctx.seed}
    return run_stage(ctx, "chunk", {"documents": docs_path, "annotations": ann_path}, settings, body)


def _template(cfg: Mapping[str, Any]) -> prompting.PromptTemplate:
    if cfg.get("template_file"):
        return prompting.load_template(cfg["template_file"])
    return prompting.get_template(cfg.get("template", "ontology_system_oneshot"))


def _backend(cfg: Mapping[str, Any]):
    kind = cfg.get("backend", "replay" if cfg.get("replay") and not cfg.get("endpoint") else "http")
    if kind == "replay":
        if not cfg.get("replay"):
            raise ConfigError("replay backend needs [extract] replay = <file>")
        if not Path(cfg["replay"]).exists():
            raise MissingInput(f"replay file not found: {cfg['replay']}")
        return ReplayBackend(ReplayStore(cfg["replay"]), cfg.get("endpoint_id", "replay"))
    if kind != "http":
        raise ConfigError(f"unknown backend {kind!r}")
    if not cfg.get("endpoint") or not cfg.get("model"):
        raise ConfigError("http backend needs an endpoint and a model")
    endpoint = Endpoint(
        cfg["endpoint"], cfg["model"],
        api_key_env=cfg.get("api_key_env", "CTIKG_API_KEY"),
        timeout=float(cfg.get("timeout", 60.0)),
        max_retries=int(cfg.get("max_retries", 2)),
        capabilities=frozenset(cfg.get("capabilities", ("greedy", "multinomial"))),
    )
    backend = HttpBackend(endpoint)
    if cfg.get("record"):
        backend = RecordingBackend(backend, ReplayStore(cfg["record"]))
    return backend


def stage_extract(ctx: Context) -> dict:
    cfg = ctx.section("extract")
    template = _template(cfg)
    try:
        params = GenerationParams.from_dict(ctx.section("generation"))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[generation]: {exc}") from exc
    paragraphs_path = ctx.stage_dir("chunk") / "paragraphs.jsonl"
    concurrency = int(cfg.get("concurrency", 8))

    def body(d: Path) -> list[str]:
        backend = _backend(cfg)
        paragraphs = [corpus.Paragraph.from_dict(r) for r in _read_jsonl(paragraphs_path)]
        records = batch_extract(backend, paragraphs, template, params, concurrency=concurrency,
                                checkpoint=d / "checkpoint.jsonl")
        _write_jsonl(d / "raw.jsonl", (r.to_dict() for r in records))
        return ["raw.jsonl"]

    # concurrency changes scheduling only, never outputs
    settings = {k: v for k, v in cfg.items() if k not in ("concurrency", "record")}
    settings.update(template=template.to_mapping(), generation=params.to_dict())
    inputs = {"paragraphs": paragraphs_path, "replay": cfg.get("replay") if cfg.get("backend", "replay") == "replay" else None}
    return run_stage(ctx, "extract", inputs, settings, body)


def stage_parse(ctx: Context) -> dict:
    raw_path = ctx.stage_dir("extract") / "raw.jsonl"

    def body(d: Path) -> list[str]:
        triples, reports = [], []
        for rec in _read_jsonl(raw_path):
            if rec.get("raw_output") is None:
                reports.append({"id": rec["id"], "error": rec.get("error")})
                continue
            rep = parse_triples(rec["raw_output"], provenance=(rec["doc_id"], rec["index"]))
            triples.extend(rep.triples)
            reports.append({"id": rec["id"], **rep.to_dict()})
        _write_jsonl(d / "triples.jsonl", (t.to_dict() for t in triples))
        _write_jsonl(d / "report.jsonl", reports)
        return ["triples.jsonl", "report.jsonl"]

    return run_stage(ctx, "parse", {"raw": raw_path}, {}, body)


def _load_triples(path: Path) -> list[TypedTriple]:
    return [TypedTriple.from_dict(r) for r in _read_jsonl(path)]


def stage_filter(ctx: Context) -> dict:
    cfg = ctx.section("filter")
    in_path = ctx.stage_dir("parse") / "triples.jsonl"
    try:
        rules = postprocess.rules_from_config(cfg["rules"]) if "rules" in cfg else list(postprocess.DEFAULT_PIPELINE)
    except postprocess.FilterConfigError as exc:
        raise ConfigError(str(exc)) from exc
    schema_path = cfg.get("schema")

    def body(d: Path) -> list[str]:
        schema = OntologySchema.load(schema_path) if schema_path else None
        kept, report = postprocess.run_pipeline(_load_triples(in_path), rules, schema)
        _write_jsonl(d / "triples.jsonl", (t.to_dict() for t in kept))
        _write(d / "report.json", report.to_json() + "\n")
        _write(d / "report.txt", report.to_table() + "\n")
        return ["triples.jsonl", "report.json", "report.txt"]

    settings = {"rules": [{"name": r.name, **r.params} for r in rules]}
    return run_stage(ctx, "filter", {"triples": in_path, "schema": schema_path}, settings, body)


def _triples_field(value: Any) -> list[TypedTriple]:
    """Triples given as dicts, as bracketed strings, or as one raw output string."""
    if isinstance(value, str):
        return parse_triples(value).triples
    out: list[TypedTriple] = []
    for item in value:
        if isinstance(item, Mapping):
            out.append(TypedTriple.from_dict(item))
        else:
            out.extend(parse_triples(str(item)).triples)
    return out


def _rouge_records(path: Path) -> dict[str, list[TypedTriple]]:
    out: dict[str, list[TypedTriple]] = {}
    for rec in _read_jsonl(path):
        if "id" not in rec:
            raise CTIKGError(f"{path}: record without an id")
        if "triples" in rec:
            value = rec["triples"]
        else:
            value = rec.get("output", rec.get("raw_output")) or ""
        out[str(rec["id"])] = _triples_field(value)
    return out


def rouge_table(agg: Mapping[str, rouge.RougeScore], label: str) -> str:
    names = list(agg)
    header = ["", *[n.upper() for n in names]]
    width = max(len(label), 8)
    lines = [f"{header[0]:<{width}}  " + "  ".join(f"{h:>8}" for h in header[1:])]
    lines.append(f"{label:<{width}}  " + "  ".join(f"{agg[n].f1:>8.4f}" for n in names))
    return "\n".join(lines)


def stage_eval_rouge(ctx: Context) -> dict:
    cfg = ctx.section("rouge")
    cand_path = Path(cfg["candidates"]) if cfg.get("candidates") else ctx.stage_dir("extract") / "raw.jsonl"
    ref_path = Path(cfg["references"]) if cfg.get("references") else ctx.stage_dir("chunk") / "annotated.jsonl"
    ns = tuple(int(n) for n in cfg.get("ns", rouge.DEFAULT_NS))
    method = cfg.get("aggregation", "mean_f1")
    label = cfg.get("label", "candidate")

    def body(d: Path) -> list[str]:
        cands = _rouge_records(cand_path)
        refs = _rouge_records(ref_path)
        if not refs:
            raise rouge.EmptyInput(f"no reference examples in {ref_path}")
        names = rouge.metric_names(ns)
        per_example = []
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["id"] + [f"{n}_{k}" for n in names for k in ("precision", "recall", "f1")])
        for key, ref in refs.items():
            scores = rouge.evaluate_extraction(cands.get(key, []), ref, ns)
            per_example.append(scores)
            writer.writerow([key] + [f"{getattr(scores[n], k):.6f}" for n in names
                                     for k in ("precision", "recall", "f1")])
        agg = rouge.aggregate(per_example, method)
        _write(d / "per_example.csv", buf.getvalue())
        summary = {"label": label, "aggregation": method, "examples": len(per_example),
                   "metrics": {n: s.as_dict() for n, s in agg.items()}}
        _write(d / "aggregate.json", _json_dump(summary))
        _write(d / "table.txt", rouge_table(agg, label) + "\n")
        return ["per_example.csv", "aggregate.json", "table.txt"]

    settings = {"ns": ns, "aggregation": method, "label": label}
    return run_stage(ctx, "eval-rouge", {"candidates": cand_path, "references": ref_path}, settings, body)


def stage_kg_build(ctx: Context) -> dict:
    cfg = ctx.section("kg")
    in_path = ctx.stage_dir("filter") / "triples.jsonl"
    typed = bool(cfg.get("typed", True))

    def body(d: Path) -> list[str]:
        graph = kgmod.build(_load_triples(in_path))
        kgmod.export_tsv(graph, d / "graph.tsv", typed=typed)
        kgmod.export_provenance(graph, d / "provenance.jsonl")
        _write(d / "stats.json", _json_dump(kgmod.stats(graph)))
        return ["graph.tsv", "provenance.jsonl", "stats.json"]

    return run_stage(ctx, "kg-build", {"triples": in_path}, {"typed": typed}, body)


def stage_kg_split(ctx: Context) -> dict:
    cfg = ctx.section("kg")
    in_path = ctx.stage_dir("kg-build") / "graph.tsv"
    ratios = tuple(cfg.get("split", (80, 10, 10)))

    def body(d: Path) -> list[str]:
        graph = kgmod.import_tsv(in_path)
        split = kgmod.split_for_lp(graph, ratios, ctx.seed)
        for part in ("train", "valid", "test"):
            kgmod.export_tsv(graph, d / f"{part}.tsv", triples=getattr(split, part))
        return ["train.tsv", "valid.tsv", "test.tsv"]

    return run_stage(ctx, "kg-split", {"graph": in_path}, {"split": ratios, "seed": ctx.seed}, body)


def _lp_graph(split_dir: Path):
    """Shared id space over the three split files, plus the id triples of each."""
    graph = kgmod.KnowledgeGraph()
    parts: dict[str, list[tuple[int, int, int]]] = {}
    for part in ("train", "valid", "test"):
        ids = []
        for _, cols in kgmod.iter_tsv(split_dir / f"{part}.tsv"):
            ids.append(graph.add(cols[0], cols[1], cols[2]))
        parts[part] = list(dict.fromkeys(ids))
    return graph, parts


def _train_config(ctx: Context) -> linkpred.TrainConfig:
    cfg = {k: v for k, v in ctx.section("lp").items() if k not in ("setting", "ranks")}
    cfg.setdefault("seed", ctx.seed)
    try:
        return linkpred.TrainConfig.from_mapping(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[lp]: {exc}") from exc


def stage_lp_train(ctx: Context) -> dict:
    split_dir = ctx.stage_dir("kg-split")
    config = _train_config(ctx)

    def body(d: Path) -> list[str]:
        graph, parts = _lp_graph(split_dir)
        result = linkpred.train(parts["train"], config, graph.num_entities, graph.num_relations)
        linkpred.save_model(result.model, d / "model.tuck")
        _write(d / "losses.json", _json_dump([round(x, 8) for x in result.losses]))
        _write(d / "vocab.json", _json_dump({"entities": graph.entities, "relations": graph.relations}))
        return ["model.tuck", "losses.json", "vocab.json"]

    inputs = {p: split_dir / f"{p}.tsv" for p in ("train", "valid", "test")}
    return run_stage(ctx, "lp-train", inputs, config.to_dict(), body)


def stage_lp_eval(ctx: Context) -> dict:
    cfg = ctx.section("lp")
    setting = cfg.get("setting", "filtered")
    if setting not in linkpred.SETTINGS:
        raise ConfigError(f"[lp] setting must be one of {linkpred.SETTINGS}")
    ranks_path = cfg.get("ranks")
    split_dir = ctx.stage_dir("kg-split")
    model_path = ctx.stage_dir("lp-train") / "model.tuck"

    def body(d: Path) -> list[str]:
        if ranks_path:
            heads, tails = linkpred.load_ranks(ranks_path)
            report = linkpred.report_from_ranks(heads, tails, setting)
        else:
            _, parts = _lp_graph(split_dir)
            model = linkpred.load_model(model_path)
            known = parts["train"] + parts["valid"] + parts["test"]
            report = linkpred.evaluate(model, parts["test"], known, setting)
        _write(d / "report.json", report.to_json() + "\n")
        _write(d / "table.txt", report.to_table() + "\n")
        return ["report.json", "table.txt"]

    if ranks_path:
        inputs = {"ranks": Path(ranks_path)}
    else:
        inputs = {"model": model_path, **{p: split_dir / f"{p}.tsv" for p in ("train", "valid", "test")}}
    return run_stage(ctx, "lp-eval", inputs, {"setting": setting, "external_ranks": bool(ranks_path)}, body)


def stage_report(ctx: Context) -> dict:
    sources = {
        "rouge": ctx.stage_dir("eval-rouge") / "aggregate.json",
        "lp": ctx.stage_dir("lp-eval") / "report.json",
        "filter": ctx.stage_dir("filter") / "report.json",
    }
    present = {k: p for k, p in sources.items() if p.exists()}
    if not present:
        raise MissingInput("report: no stage outputs found (run eval-rouge or lp-eval first)")

    def body(d: Path) -> list[str]:
        sections = []
        if "rouge" in present:
            s = json.loads(present["rouge"].read_text(encoding="utf-8"))
            agg = {n: rouge.RougeScore(**v) for n, v in s["metrics"].items()}
            sections.append(f"ROUGE F1 ({s['aggregation']}, {s['examples']} examples)\n" + rouge_table(agg, s["label"]))
        if "filter" in present:
            s = json.loads(present["filter"].read_text(encoding="utf-8"))
            rep = postprocess.FilterReport(
                [postprocess.RuleReport(**r) for r in s["rules"]], s["final_count"], s["final_entity_count"])
            sections.append("post-processing\n" + rep.to_table())
        if "lp" in present:
            s = json.loads(present["lp"].read_text(encoding="utf-8"))
            blocks = {}
            for name in ("head", "tail", "both"):
                b = s[name]
                hits = {int(k.split("@")[1]): v for k, v in b.items() if k.startswith("hits@")}
                blocks[name] = linkpred.RankMetrics(b["mrr"], hits, b["count"])
            sections.append(linkpred.RankReport(blocks["head"], blocks["tail"], blocks["both"], s["setting"]).to_table())
        _write(d / "report.txt", "\n\n".join(sections) + "\n")
        return ["report.txt"]

    result = run_stage(ctx, "report", present, {}, body)
    sys.stdout.write((ctx.stage_dir("report") / "report.txt").read_text(encoding="utf-8"))
    return result


STAGES: dict[str, Callable[[Context], dict]] = {
    "chunk": stage_chunk,
    "extract": stage_extract,
    "parse": stage_parse,
    "filter": stage_filter,
    "eval-rouge": stage_eval_rouge,
    "kg-build": stage_kg_build,
    "kg-split": stage_kg_split,
    "lp-train": stage_lp_train,
    "lp-eval": stage_lp_eval,
    "report": stage_report,
}
PIPELINE = ("chunk", "extract", "parse", "filter", "eval-rouge", "kg-build", "kg-split", "lp-train", "lp-eval", "report")


# --- argument handling ------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file")
    common.add_argument("--out", help="output directory (default: config 'out' or ./ctikg-out)")
    common.add_argument("--seed", type=int, help="seed for splits and training")
    common.add_argument("--force", action="store_true", help="rerun even if the manifest is current")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ctikg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*STAGES, "run-all"):
        p = sub.add_parser(name, parents=[common])
        if name in ("extract", "run-all"):
            p.add_argument("--endpoint", help="base URL of an OpenAI-style completion server")
            p.add_argument("--model", help="model name sent to the endpoint")
            p.add_argument("--concurrency", type=int)
            p.add_argument("--template", help="built-in prompt template name")
            p.add_argument("--stop-pattern", help=r"client-side stop regex, e.g. '\n|</s>'")
            p.add_argument("--params-file", help="JSON or TOML file of generation parameters")
        if name in ("eval-rouge", "run-all"):
            p.add_argument("--candidates", help="JSONL of {id, output|triples}")
            p.add_argument("--references", help="JSONL of {id, triples|output}")
        if name in ("lp-eval", "run-all"):
            g = p.add_mutually_exclusive_group()
            g.add_argument("--filtered", dest="setting", action="store_const", const="filtered")
            g.add_argument("--raw", dest="setting", action="store_const", const="raw")
            p.add_argument("--ranks", help="external rank file (head|tail<TAB>rank per line)")
    return parser


def _load_params_file(path: Path) -> dict[str, Any]:
    if not path.exists():
        raise MissingInput(f"params file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text) if path.suffix == ".json" else tomllib.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse params file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"params file {path} must hold a table of generation parameters")
    return data


def _apply_overrides(config: dict[str, Any], args: argparse.Namespace) -> None:
    def put(section: str, key: str, value: Any) -> None:
        if value is not None:
            config.setdefault(section, {})[key] = value

    get = lambda name: getattr(args, name, None)  # noqa: E731
    if get("endpoint") is not None:
        put("extract", "endpoint", get("endpoint"))
        put("extract", "backend", "http")
    put("extract", "model", get("model"))
    put("extract", "concurrency", get("concurrency"))
    put("extract", "template", get("template"))
    if get("params_file") is not None:
        for key, value in _load_params_file(Path(get("params_file"))).items():
            put("generation", key, value)
    put("generation", "stop_pattern", get("stop_pattern"))
    for key in ("candidates", "references"):
        if get(key) is not None:
            put("rouge", key, str(Path(get(key)).resolve()))
    put("lp", "setting", get("setting"))
    if get("ranks") is not None:
        put("lp", "ranks", str(Path(get("ranks")).resolve()))


def _fail(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    return code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        config, _ = load_config(args.config)
        _apply_overrides(config, args)
        validate_config(config)
        seed = args.seed if args.seed is not None else int(config.get("seed", 0))
        out = Path(args.out) if args.out else Path(config.get("out", "ctikg-out"))
        ctx = Context(config, out, seed, args.force)
        stages = PIPELINE if args.command == "run-all" else (args.command,)
        for name in stages:
            STAGES[name](ctx)
    except (ConfigError, MissingInput) as exc:
        return _fail(type(exc).__name__, str(exc), 2)
    except CTIKGError as exc:
        return _fail(type(exc).__name__, str(exc), 1)
    except (OSError, ValueError, KeyError) as exc:
        return _fail(type(exc).__name__, str(exc), 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())

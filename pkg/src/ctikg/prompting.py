"""Prompt templates for zero/few-shot triple extraction and their renderer."""

from __future__ import annotations

import enum
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .errors import CTIKGError
from .ontology import EntityType, RelationType

INPUT_MARKER = "{input}"
MAX_EXAMPLES = 4


class MissingPlaceholder(CTIKGError, ValueError):
    pass


class TemplateNotFound(CTIKGError, KeyError):
    pass


class TemplateError(CTIKGError, ValueError):
    pass


class ChatFormat(str, enum.Enum):
    LLAMA2_INST = "llama2_inst"
    ALPACA = "alpaca"
    PLAIN = "plain"


class SeparatorStyle(str, enum.Enum):
    QUOTES = "quotes"
    TXT = "txt"
    TXT_BRACKETS = "txt_brackets"
    NONE = "none"

    def wrap(self, text: str) -> str:
        if self is SeparatorStyle.QUOTES:
            return f'"{text}"'
        if self is SeparatorStyle.TXT:
            return f"<txt>{text}</txt>"
        if self is SeparatorStyle.TXT_BRACKETS:
            return f"[TXT]{text}[/TXT]"
        return text


# Llama 2 chat framing.
INST_OPEN = "[INST]"
INST_CLOSE = "[/INST]"
SYS_OPEN = "<<SYS>>"
SYS_CLOSE = "<</SYS>>"
TURN_BREAK = "</s><s>"
# Alpaca framing.
ALPACA_INSTRUCTION = "### Instruction:"
ALPACA_INPUT = "### Input:"
ALPACA_RESPONSE = "### Response:"


@dataclass(frozen=True)
class FewShotExample:
    input_text: str
    triples_text: str


@dataclass(frozen=True)
class PromptTemplate:
    """Everything needed to turn one paragraph into one prompt string.

    ``input_template`` carries the ``{input}`` marker exactly once; the
    paragraph (wrapped per ``separator``) replaces it, and so do the example
    inputs. ``response_prefix`` is the assistant cue written after each
    input turn, e.g. ``"Extracted triples: "``.
    """

    name: str
    format: ChatFormat
    instruction: str
    system: str = ""
    examples: tuple[FewShotExample, ...] = ()
    input_template: str = "Input text: {input}"
    separator: SeparatorStyle = SeparatorStyle.NONE
    response_prefix: str = ""
    example_delimiter: str = ""
    description: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "format", ChatFormat(self.format))
        object.__setattr__(self, "separator", SeparatorStyle(self.separator))
        object.__setattr__(self, "examples", tuple(self.examples))
        if len(self.examples) > MAX_EXAMPLES:
            raise TemplateError(f"{self.name}: at most {MAX_EXAMPLES} examples, got {len(self.examples)}")

    @property
    def shots(self) -> int:
        return len(self.examples)

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "PromptTemplate":
        allowed = {
            "name", "format", "system", "instruction", "examples", "input_template",
            "separator_style", "separator", "response_prefix", "example_delimiter", "description",
        }
        unknown = set(data) - allowed
        if unknown:
            raise TemplateError(f"unknown template keys: {sorted(unknown)}")
        try:
            examples = tuple(
                FewShotExample(e["input"], e["triples"]) if isinstance(e, Mapping) else FewShotExample(*e)
                for e in data.get("examples", ())
            )
            return cls(
                name=data["name"],
                format=ChatFormat(data.get("format", ChatFormat.LLAMA2_INST)),
                instruction=data.get("instruction", ""),
                system=data.get("system", ""),
                examples=examples,
                input_template=data.get("input_template", "Input text: {input}"),
                separator=SeparatorStyle(data.get("separator_style", data.get("separator", "none"))),
                response_prefix=data.get("response_prefix", ""),
                example_delimiter=data.get("example_delimiter", ""),
                description=data.get("description", ""),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise TemplateError(f"bad template definition: {exc}") from exc

    def to_mapping(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "format": self.format.value,
            "system": self.system,
            "instruction": self.instruction,
            "examples": [{"input": e.input_text, "triples": e.triples_text} for e in self.examples],
            "input_template": self.input_template,
            "separator_style": self.separator.value,
            "response_prefix": self.response_prefix,
            "example_delimiter": self.example_delimiter,
            "description": self.description,
        }


def load_template(path: str | Path) -> PromptTemplate:
    """Read one template from a ``.toml`` or ``.json`` file."""
    path = Path(path)
    if path.suffix == ".json":
        data = json.loads(path.read_text(encoding="utf-8"))
    else:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    return PromptTemplate.from_mapping(data)


def _fill(template: PromptTemplate, text: str) -> str:
    if template.input_template.count(INPUT_MARKER) != 1:
        raise MissingPlaceholder(
            f"template {template.name!r}: input_template must contain {INPUT_MARKER} exactly once"
        )
    return template.input_template.replace(INPUT_MARKER, template.separator.wrap(text))


def _join(*parts: str, sep: str = " ") -> str:
    return sep.join(p for p in parts if p)


def _cue(prefix: str) -> str:
    return f" {prefix}" if prefix else ""


def _render_llama2(t: PromptTemplate, input_text: str) -> str:
    head = f"{INST_OPEN} "
    if t.system:
        head += f"{SYS_OPEN}\n{t.system}\n{SYS_CLOSE}\n\n"
    out = head
    first = True
    for ex in t.examples:
        body = _join(t.instruction, _fill(t, ex.input_text)) if first else _fill(t, ex.input_text)
        out += f"{body} {INST_CLOSE} {t.response_prefix}{ex.triples_text} {TURN_BREAK}{INST_OPEN} "
        first = False
    body = _join(t.instruction, _fill(t, input_text)) if first else _fill(t, input_text)
    return out + f"{body} {INST_CLOSE}" + _cue(t.response_prefix)


def _render_alpaca(t: PromptTemplate, input_text: str) -> str:
    lines = []
    if t.system:
        lines.append(t.system)
    lines.append(f"{ALPACA_INSTRUCTION} {t.instruction}")
    for ex in t.examples:
        lines.append(f"{ALPACA_INPUT} {_fill(t, ex.input_text)}")
        lines.append(f"{ALPACA_RESPONSE} {t.response_prefix}{ex.triples_text}")
    lines.append(f"{ALPACA_INPUT} {_fill(t, input_text)}")
    lines.append(f"{ALPACA_RESPONSE} {t.response_prefix}")
    return "\n".join(lines)


def _render_plain(t: PromptTemplate, input_text: str) -> str:
    lines = [p for p in (t.system, t.instruction) if p]
    delim = [t.example_delimiter] if t.example_delimiter else []
    for ex in t.examples:
        lines += delim
        lines.append(_fill(t, ex.input_text))
        lines.append(f"{t.response_prefix}{ex.triples_text}")
    lines += delim
    lines.append(_fill(t, input_text))
    if t.response_prefix:
        lines.append(t.response_prefix)
    return "\n".join(lines)


_RENDERERS = {
    ChatFormat.LLAMA2_INST: _render_llama2,
    ChatFormat.ALPACA: _render_alpaca,
    ChatFormat.PLAIN: _render_plain,
}


def render_prompt(template: PromptTemplate, input_text: str) -> str:
    """Assemble the full prompt for ``input_text``.

    Output is byte-deterministic for a given template and input.
    """
    if not input_text:
        raise ValueError("input_text must be non-empty")
    return _RENDERERS[template.format](template, input_text)


def example_turn_count(rendered: str, fmt: ChatFormat, template: PromptTemplate | None = None) -> int:
    """Count completed example turns in a rendered prompt (used by checks)."""
    if fmt is ChatFormat.LLAMA2_INST:
        return rendered.count(TURN_BREAK)
    if fmt is ChatFormat.ALPACA:
        return rendered.count(f"\n{ALPACA_RESPONSE} ") - 1
    if template is None or not template.example_delimiter:
        raise ValueError("plain prompts need a template with an example delimiter to count turns")
    return rendered.count(template.example_delimiter) - 1


# --- built-in catalog -------------------------------------------------------

_SPYNOTE_TEXT = (
    "A new version of the SpyNote Trojan is designed to trick Android users into thinking "
    "it's a legitimate Netflix application. Once installed, the remote access Trojan (RAT) "
    "essentially hands control of the device over to the hacker, enabling them to copy files, "
    "view contacts, and eavesdrop on the victim, among other capabilities."
)
_SPYNOTE_TRIPLES = (
    "[SpyNote, isA, Trojan], [SpyNote, targets, Android], "
    "[SpyNote, uses, designed to trick Android users into thinking it's a legitimate Netflix application], "
    "[SpyNote, isA, remote access Trojan], [SpyNote, isA, RAT], "
    "[SpyNote, uses, hands control of the device over to the hacker], "
    "[SpyNote, uses, enabling them to copy files], [SpyNote, uses, view contacts], "
    "[SpyNote, uses, eavesdrop on the victim]"
)
_SPYNOTE_TYPED = (
    "[SpyNote[Malware], isA, Trojan[MalwareType]], [SpyNote[Malware], targets, Android[OperatingSystem]], "
    "[SpyNote[Malware], isA, remote access Trojan[MalwareType]], [SpyNote[Malware], isA, RAT[MalwareType]], "
    "[SpyNote[Malware], uses, hands control of the device over to the hacker[AttackPattern]], "
    "[SpyNote[Malware], uses, view contacts[AttackPattern]], "
    "[SpyNote[Malware], uses, eavesdrop on the victim[AttackPattern]]"
)
SPYNOTE = FewShotExample(_SPYNOTE_TEXT, _SPYNOTE_TRIPLES)
SPYNOTE_TYPED = FewShotExample(_SPYNOTE_TEXT, _SPYNOTE_TYPED)


def _enumerate(items: list[str]) -> str:
    return ", ".join(items[:-1]) + f", and {items[-1]}"


ENTITY_LISTING = _enumerate([t.value for t in EntityType])
RELATION_LISTING = _enumerate([r.value for r in RelationType])


def _catalog() -> dict[str, PromptTemplate]:
    templates = [
        PromptTemplate(
            name="ontology_system_oneshot",
            format=ChatFormat.LLAMA2_INST,
            system=(
                "Extract cybersecurity-related triples consisting of entities of the types "
                f"{ENTITY_LISTING} and relationships between these entities of the types "
                f"{RELATION_LISTING}. Print the extracted triples in the format: "
                "[Entity1, Relation, Entity2]"
            ),
            instruction="",
            examples=(SPYNOTE,),
            response_prefix="Extracted triples: ",
            description="ontology in the system block plus one worked example",
        ),
        PromptTemplate(
            name="relations_system_oneshot",
            format=ChatFormat.LLAMA2_INST,
            system=(
                "Extract [subject, predicate, object]-triples from the input text with the "
                f"following predicates: {RELATION_LISTING}."
            ),
            instruction="",
            examples=(SPYNOTE,),
            response_prefix="Extracted triples: ",
            description="relation list only, one example",
        ),
        PromptTemplate(
            name="minimal_zeroshot",
            format=ChatFormat.LLAMA2_INST,
            instruction="Extract [subject, predicate, object]-triples from the following input text.",
            separator=SeparatorStyle.QUOTES,
            description="short instruction, no ontology, no examples",
        ),
        PromptTemplate(
            name="minimal_zeroshot_txt",
            format=ChatFormat.LLAMA2_INST,
            instruction="Extract [subject, predicate, object]-triples from the following input text.",
            separator=SeparatorStyle.TXT,
            description="short instruction with <txt></txt> input markers",
        ),
        PromptTemplate(
            name="guidance_oneshot",
            format=ChatFormat.PLAIN,
            instruction=(
                "Extract triples from the following input text. Your answers need to be in the "
                "format [subject, predicate, object]."
            ),
            examples=(SPYNOTE,),
            response_prefix="Extracted triples: ",
            example_delimiter="-----------",
            description="plain completion prompt with dashed separators; pair with stop pattern \\n|</s>",
        ),
        PromptTemplate(
            name="alpaca_finetune",
            format=ChatFormat.ALPACA,
            instruction="Extract [subject, predicate, object]-triples from the following input text.",
            input_template="{input}",
            description="Alpaca instruction format used for base-model fine-tuning",
        ),
        PromptTemplate(
            name="typed_oneshot",
            format=ChatFormat.LLAMA2_INST,
            system=(
                "Extract cybersecurity-related triples. Entities must be one of the types "
                f"{ENTITY_LISTING}; relationships must be one of {RELATION_LISTING}. "
                "Print each triple in the format [Entity1[EntityType], Relation, Entity2[EntityType]]"
            ),
            instruction="",
            examples=(SPYNOTE_TYPED,),
            response_prefix="Extracted triples: ",
            description="asks for entity types next to every entity",
        ),
    ]
    return {t.name: t for t in templates}


_BUILTINS = _catalog()


def builtin_templates() -> dict[str, PromptTemplate]:
    return dict(_BUILTINS)


def get_template(name: str) -> PromptTemplate:
    try:
        return _BUILTINS[name]
    except KeyError:
        raise TemplateNotFound(f"no template named {name!r}; known: {sorted(_BUILTINS)}") from None

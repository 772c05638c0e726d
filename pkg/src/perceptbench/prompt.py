"""Comparison prompt rendering and verdict parsing.

The judge answers with one line per principle::

    VISUAL_CLUTTER: IMAGE_2 | dense overlapping text regions

The winner is always the image that is *more complex* under that lens, so
all eight score vectors point the same way as a complexity rating.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Mapping

from .errors import DuplicatePrinciple, MalformedVerdict, MissingPrinciple, TemplateError
from .principles import PRINCIPLES, Principle
from .schedule import PairTask

IMAGE_TOKENS = ("IMAGE_1", "IMAGE_2")

FORMAT_LINE = "FORMAT: <PRINCIPLE>: <IMAGE_1|IMAGE_2> | <justification>"

OUTPUT_FORMAT_BLOCK = "\n".join(
    [
        "OUTPUT FORMAT",
        "Answer with exactly one line per parameter and nothing else, using this grammar:",
        FORMAT_LINE,
        "<PRINCIPLE> is the parameter name exactly as written in upper case in the definitions above.",
        "The second field names the image that is MORE complex under that parameter;",
        "it must be IMAGE_1 or IMAGE_2. Ties are not allowed: always pick one image.",
        "After the '|' give a one-sentence justification that refers to concrete visual content.",
    ]
)

CORRECTIVE_SUFFIX = (
    "\n\nYour previous answer could not be parsed. Reply again with exactly eight lines, "
    "one per parameter, each following the line that starts with 'FORMAT:' above."
)


class Side(str, Enum):
    FIRST = "First"
    SECOND = "Second"

    @property
    def token(self) -> str:
        return IMAGE_TOKENS[0] if self is Side.FIRST else IMAGE_TOKENS[1]


@dataclass(frozen=True)
class PrincipleText:
    definition: str
    question: str


_DEFAULT_TEXT: dict[Principle, PrincipleText] = {
    Principle.SIMILARITY: PrincipleText(
        "Elements that share colour, shape, size or texture are seen as belonging together, "
        "so an image built from a few families of alike elements reads as organised.",
        "Which image shows weaker grouping by shared visual attributes, leaving more "
        "unrelated-looking elements to process?",
    ),
    Principle.PROXIMITY: PrincipleText(
        "Elements placed close to one another are perceived as a group; clear spacing "
        "between groups lets the viewer parse the layout at a glance.",
        "Which image has less coherent spatial grouping, with spacing that does not "
        "separate elements into clear clusters?",
    ),
    Principle.SIMPLICITY: PrincipleText(
        "Also called Pragnanz: viewers interpret a scene in the simplest, most regular "
        "form available, favouring plain shapes and minimal structure.",
        "Which image shows weaker adherence to the law of simplicity, i.e. it cannot be "
        "reduced to a few simple, regular forms?",
    ),
    Principle.CLOSURE: PrincipleText(
        "Viewers mentally complete incomplete contours and gaps, perceiving whole "
        "shapes even when parts of them are missing.",
        "Which image makes it harder to perceive complete, closed shapes from its contours?",
    ),
    Principle.CONTINUITY: PrincipleText(
        "The eye follows smooth lines, curves and paths, and elements arranged along a "
        "continuous direction are seen as related.",
        "Which image offers fewer smooth, continuous paths for the eye to follow, with "
        "more abrupt breaks in direction?",
    ),
    Principle.FIGURE_GROUND: PrincipleText(
        "A scene is split into a figure that draws attention and a ground that recedes "
        "behind it; strong contrast makes this split immediate.",
        "Which image makes it harder to separate the main figure from its background?",
    ),
    Principle.VISUAL_CLUTTER: PrincipleText(
        "The amount of crowding and disorder: many items, overlapping regions, dense "
        "text and competing details all add clutter.",
        "Which image has more visual clutter?",
    ),
    Principle.VISUAL_SYMMETRY: PrincipleText(
        "Mirror or rotational balance of the composition; symmetric layouts are "
        "processed faster and perceived as more orderly.",
        "Which image is less symmetric or balanced in its composition?",
    ),
}

_DEFAULT_ROLE = (
    "You are an HCI researcher studying human visual perception. Your goal is to "
    "evaluate and compare the visual complexity of two images the way a careful human "
    "annotator would, using established principles from Gestalt psychology together "
    "with the notions of visual clutter and visual symmetry."
)

_DEFAULT_TASK = (
    "Two images are attached: the first is IMAGE_1 and the second is IMAGE_2. Analyse "
    "and compare them on each of the eight parameters defined above. For every "
    "parameter answer its question by choosing the image that is more complex under "
    "that parameter, and justify your choice."
)


@dataclass(frozen=True)
class PromptTemplate:
    role_preamble: str
    principle_text: Mapping[Principle, PrincipleText]
    task_instruction: str
    output_format_block: str = field(default=OUTPUT_FORMAT_BLOCK, init=False)

    def __post_init__(self):
        missing = [p.value for p in PRINCIPLES if p not in self.principle_text]
        if missing:
            raise TemplateError(f"template lacks definitions for {', '.join(missing)}")
        for p in PRINCIPLES:
            text = self.principle_text[p]
            if not text.definition.strip() or not text.question.strip():
                raise TemplateError(f"{p.value}: definition and question must be non-empty")
        if not self.role_preamble.strip() or not self.task_instruction.strip():
            raise TemplateError("role preamble and task instruction must be non-empty")

    def definitions_section(self) -> str:
        lines = ["PARAMETERS"]
        for p in PRINCIPLES:
            text = self.principle_text[p]
            lines.append(f"{p.value}: {text.definition.strip()}")
            lines.append(f"  Question: {text.question.strip()}")
        return "\n".join(lines)

    def text(self) -> str:
        return "\n\n".join(
            [
                self.role_preamble.strip(),
                self.definitions_section(),
                self.task_instruction.strip(),
                self.output_format_block,
            ]
        )

    def content_hash(self) -> str:
        return hashlib.sha256(self.text().encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class RenderedPrompt:
    text: str
    # item ids bound to IMAGE_1 and IMAGE_2, in attachment order
    slots: tuple[str, str]
    pair: PairTask


def default_template() -> PromptTemplate:
    return PromptTemplate(
        role_preamble=_DEFAULT_ROLE,
        principle_text=dict(_DEFAULT_TEXT),
        task_instruction=_DEFAULT_TASK,
    )


_SECTION_RE = re.compile(r"^\[([A-Za-z_.]+)\]\s*$")


def load_template(path: str | Path) -> PromptTemplate:
    """Override parts of the default template from a sectioned text file.

    Recognised sections are ``[role_preamble]``, ``[task_instruction]``,
    ``[definition.<PRINCIPLE>]`` and ``[question.<PRINCIPLE>]``. The output
    format block is fixed because the parser depends on it.
    """
    sections: dict[str, list[str]] = {}
    current = None
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        m = _SECTION_RE.match(line)
        if m:
            current = m.group(1)
            if current in sections:
                raise TemplateError(f"section [{current}] appears twice")
            sections[current] = []
        elif current is not None:
            sections[current].append(line)
        elif line.strip():
            raise TemplateError("template text found before the first [section] header")

    base = default_template()
    role, task = base.role_preamble, base.task_instruction
    texts = dict(base.principle_text)
    for name, lines in sections.items():
        body = "\n".join(lines).strip()
        if name == "role_preamble":
            role = body
        elif name == "task_instruction":
            task = body
        elif name.startswith(("definition.", "question.")):
            kind, _, pname = name.partition(".")
            try:
                p = Principle(pname.upper())
            except ValueError:
                raise TemplateError(f"unknown principle in section [{name}]") from None
            old = texts[p]
            texts[p] = replace(old, definition=body) if kind == "definition" else replace(old, question=body)
        elif name.lower().startswith("format"):
            raise TemplateError("the output format block cannot be overridden")
        else:
            raise TemplateError(f"unknown template section [{name}]")
    return PromptTemplate(role_preamble=role, principle_text=texts, task_instruction=task)


def render_prompt(template: PromptTemplate, pair: PairTask) -> RenderedPrompt:
    return RenderedPrompt(text=template.text(), slots=(pair.first, pair.second), pair=pair)


@dataclass(frozen=True)
class Verdict:
    winner: Side
    justification: str


@dataclass(frozen=True)
class VerdictSet:
    first: str
    second: str
    verdicts: Mapping[Principle, Verdict]
    raw_response: str = field(default="", compare=False)
    model_id: str = field(default="", compare=False)
    temperature: float | None = field(default=None, compare=False)
    timestamp: str = field(default="", compare=False)

    def __post_init__(self):
        missing = [p for p in PRINCIPLES if p not in self.verdicts]
        if missing:
            raise MissingPrinciple(f"verdicts missing for {', '.join(p.value for p in missing)}")
        for p, v in self.verdicts.items():
            if not v.justification.strip():
                raise MalformedVerdict(f"{p.value}: empty justification")

    @property
    def pair(self) -> tuple[str, str]:
        return (self.first, self.second)

    def winner_id(self, principle: Principle) -> str:
        return self.first if self.verdicts[principle].winner is Side.FIRST else self.second

    def to_dict(self) -> dict:
        return {
            "first": self.first,
            "second": self.second,
            "verdicts": {
                p.value: {"winner": self.verdicts[p].winner.value, "justification": self.verdicts[p].justification}
                for p in PRINCIPLES
            },
            "raw_response": self.raw_response,
            "model_id": self.model_id,
            "temperature": self.temperature,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "VerdictSet":
        return cls(
            first=doc["first"],
            second=doc["second"],
            verdicts={
                Principle(name): Verdict(Side(v["winner"]), v["justification"])
                for name, v in doc["verdicts"].items()
            },
            raw_response=doc.get("raw_response", ""),
            model_id=doc.get("model_id", ""),
            temperature=doc.get("temperature"),
            timestamp=doc.get("timestamp", ""),
        )


def format_verdicts(vs: VerdictSet) -> str:
    """Serialize a verdict set back into the response grammar."""
    return "\n".join(
        f"{p.value}: {vs.verdicts[p].winner.token} | {vs.verdicts[p].justification}" for p in PRINCIPLES
    )


# optional bullet / markdown emphasis around the name is tolerated
_LINE_RE = re.compile(
    r"^\s*(?:[-*]\s+)?\**\s*([A-Za-z_]+)\s*\**\s*:\s*\**\s*([A-Za-z0-9_]+)\s*\**\s*\|(.*)$"
)
_NAMES = {p.value: p for p in PRINCIPLES}


def parse_verdicts(response: str | bytes, pair: PairTask) -> VerdictSet:
    """Parse a judge response into one verdict per principle.

    Lines that do not look like ``NAME: TOKEN | text`` for a known principle
    are ignored, so preambles and trailing remarks are harmless. Raises a
    :class:`VerdictError` subclass on any grammar violation.
    """
    if isinstance(response, (bytes, bytearray)):
        response = bytes(response).decode("utf-8", errors="replace")
    found: dict[Principle, Verdict] = {}
    for line in response.splitlines():
        m = _LINE_RE.match(line)
        if not m:
            continue
        principle = _NAMES.get(m.group(1).upper())
        if principle is None:
            continue
        token = m.group(2).upper()
        if token not in IMAGE_TOKENS:
            raise MalformedVerdict(f"{principle.value}: winner must be IMAGE_1 or IMAGE_2, got {m.group(2)!r}")
        justification = m.group(3).strip()
        if not justification:
            raise MalformedVerdict(f"{principle.value}: empty justification")
        if principle in found:
            raise DuplicatePrinciple(f"{principle.value} answered more than once")
        found[principle] = Verdict(Side.FIRST if token == "IMAGE_1" else Side.SECOND, justification)
    if len(found) < len(PRINCIPLES):
        missing = [p.value for p in PRINCIPLES if p not in found]
        raise MissingPrinciple(f"no well-formed line for {', '.join(missing)}")
    return VerdictSet(
        first=pair.first,
        second=pair.second,
        verdicts=found,
        raw_response=response,
        timestamp=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )

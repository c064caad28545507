"""Disease-entity extraction from clinical notes with LLM rounds and refinement."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Iterable

from .ehr.notes import ClinicalNote
from .errors import PipelineRuntimeError, ValidationError
from .gateway.client import ChatRequest
from .prompts import load_template

logger = logging.getLogger(__name__)

EXTRACTOR_PROFILE = "extractor"
DEFAULT_MAX_ROUNDS = 3

_NONE_REPLY = re.compile(r"(none|n/?a|nil|no (diseases?|entities)( (were )?(found|identified|mentioned))?)")
_BULLET = re.compile(r"^\s*(?:[-*•]+|\d+[.)])\s*")
_LABEL = re.compile(r"^\s*(?:diseases?|entities)\s*:\s*", re.IGNORECASE)
_VERDICT = re.compile(r"^\s*(?:[-*•]+\s*)?(.+?)\s*[:=\-]\s*(yes|no)\b", re.IGNORECASE)


class ExtractionError(PipelineRuntimeError):
    def __init__(self, message: str, round_index: int):
        self.round_index = round_index
        super().__init__(f"round {round_index}: {message}")


def clean_entity(text: str) -> str:
    text = _BULLET.sub("", text)
    text = text.strip().strip("\"'`[](){}").strip()
    text = text.rstrip(".!;:").strip()
    return " ".join(text.lower().split())


@dataclass(frozen=True)
class ExtractionPrompt:
    template: str
    instruction_block: str
    example_block: str
    version: str = "v1"

    @classmethod
    def load(cls, version: str = "v1") -> "ExtractionPrompt":
        return cls(
            template=load_template("extract", version),
            instruction_block=load_template("extract", version, "instruction"),
            example_block=load_template("extract", version, "example"),
            version=version,
        )

    def render(self, note_text: str, previous: Iterable[str] = ()) -> str:
        instruction = self.instruction_block
        previous = sorted(previous)
        if previous:
            instruction += (
                "\nAlready found: " + ", ".join(previous) + ". "
                "List these again together with any other diseases written in the note."
            )
        return self.template.format(
            instruction_block=instruction, example_block=self.example_block, note_text=note_text
        )


def parse_entity_list(reply: str) -> tuple[set[str], bool]:
    """Parse a delimited entity list; returns ``(entities, parsed_ok)``.

    Accepts comma/newline/semicolon separated items with optional bullets. A
    reply with no delimiter is only taken as a single entity when it is short
    and not a sentence; otherwise it is treated as unparseable prose.
    """
    text = _LABEL.sub("", reply.strip())
    if not text or _NONE_REPLY.fullmatch(text.lower().strip(" .!\"'")):
        return set(), True
    parts = re.split(r"[,;\n]", text)
    if len(parts) == 1:
        single = parts[0].strip()
        if single.endswith((".", "!", "?")) or len(single.split()) > 6:
            return set(), False
    out = set()
    for part in parts:
        item = clean_entity(_LABEL.sub("", part))
        if item and not _NONE_REPLY.fullmatch(item):
            out.add(item)
    return out, True


@dataclass
class ExtractionRound:
    raw_output: str
    parsed: set[str]
    accepted: set[str]
    parse_ok: bool = True


@dataclass
class ExtractionTrace:
    rounds: list[ExtractionRound] = field(default_factory=list)
    converged: bool = False

    @property
    def total_rounds(self) -> int:
        return len(self.rounds)


def _chat(gateway, profile: str, prompt: str) -> str:
    return gateway.chat(ChatRequest(profile=profile, prompt=prompt)).text


def _round(note, gateway, profile, prompt: ExtractionPrompt, previous) -> tuple[str, set[str], bool]:
    raw = _chat(gateway, profile, prompt.render(note.text, previous))
    parsed, ok = parse_entity_list(raw)
    if not ok:
        logger.info("unparseable extraction reply: %.80r", raw)
    return raw, parsed, ok


def extract_round(
    note: ClinicalNote,
    gateway,
    profile: str = EXTRACTOR_PROFILE,
    prompt: ExtractionPrompt | None = None,
    previous: Iterable[str] = (),
) -> set[str]:
    if not note.text:
        raise ValidationError("cannot extract entities from an empty note")
    _, parsed, _ = _round(note, gateway, profile, prompt or ExtractionPrompt.load(), previous)
    return parsed


def type_filter_prompt(terms: Iterable[str], version: str = "v1") -> str:
    return load_template("type_filter", version).format(terms="\n".join(f"- {t}" for t in terms))


def parse_verdicts(reply: str) -> set[str]:
    confirmed = set()
    for line in reply.splitlines():
        m = _VERDICT.match(line)
        if m and m.group(2).lower() == "yes":
            confirmed.add(clean_entity(m.group(1)))
    return confirmed


def refine(
    entities: Iterable[str],
    note: ClinicalNote,
    gateway,
    profile: str = EXTRACTOR_PROFILE,
    version: str = "v1",
) -> set[str]:
    """Drop entities absent from the note, then non-diseases, then duplicates.

    Step 2 asks the gateway for a yes/no verdict per surviving term in one
    call; any gateway failure propagates rather than letting unfiltered
    entities through.
    """
    # Steps 1 and 3 both operate on the cleaned surface; a set dedupes.
    grounded = sorted({e for e in map(clean_entity, entities) if e and e in note.text})
    if not grounded:
        return set()
    reply = _chat(gateway, profile, type_filter_prompt(grounded, version))
    confirmed = parse_verdicts(reply)
    return {e for e in grounded if e in confirmed}


def extract_note_entities(
    note: ClinicalNote,
    gateway,
    max_rounds: int = DEFAULT_MAX_ROUNDS,
    profile: str = EXTRACTOR_PROFILE,
    prompt: ExtractionPrompt | None = None,
) -> tuple[set[str], ExtractionTrace]:
    if max_rounds < 1:
        raise ValidationError("max_rounds must be >= 1")
    trace = ExtractionTrace()
    if not note.text:
        trace.rounds.append(ExtractionRound("", set(), set()))
        trace.converged = True
        return set(), trace
    prompt = prompt or ExtractionPrompt.load()
    accepted: set[str] = set()
    for i in range(1, max_rounds + 1):
        try:
            raw, parsed, ok = _round(note, gateway, profile, prompt, accepted)
            new = refine(accepted | parsed, note, gateway, profile, prompt.version)
        except ValidationError:
            raise
        except Exception as exc:
            raise ExtractionError(f"{type(exc).__name__}: {exc}", i) from exc
        trace.rounds.append(ExtractionRound(raw, parsed, set(new), ok))
        if i > 1 and new == accepted:
            trace.converged = True
            break
        accepted = new
    return accepted, trace

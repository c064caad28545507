"""Summary prompt assembly and generation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .gateway.client import ChatRequest, ContentRisk
from .prompts import load_template
from .ts_entities import EntityMention

logger = logging.getLogger(__name__)

SUMMARIZER_PROFILE = "summarizer"
NONE_TEXT = "None"
DEFAULT_KNOWLEDGE_BUDGET = 4000


@dataclass
class EnhancementBundle:
    patient_id: str
    abnormal_features: list[EntityMention] = field(default_factory=list)
    diseases: list[str] = field(default_factory=list)
    knowledge_texts: list[str] = field(default_factory=list)
    triples: list[tuple[str, str, str]] = field(default_factory=list)
    summary: str | None = None
    summary_fallback: bool = False

    def to_dict(self) -> dict:
        return {
            "patient_id": self.patient_id,
            "abnormal_features": [m.to_dict() for m in self.abnormal_features],
            "diseases": list(self.diseases),
            "knowledge_texts": list(self.knowledge_texts),
            "triples": [list(t) for t in self.triples],
            "summary": self.summary,
            "summary_fallback": self.summary_fallback,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "EnhancementBundle":
        return cls(
            patient_id=obj["patient_id"],
            abnormal_features=[
                EntityMention(source="timeseries", **m) for m in obj.get("abnormal_features", [])
            ],
            diseases=list(obj.get("diseases", [])),
            knowledge_texts=list(obj.get("knowledge_texts", [])),
            triples=[tuple(t) for t in obj.get("triples", [])],
            summary=obj.get("summary"),
            summary_fallback=bool(obj.get("summary_fallback", False)),
        )


def _lines(items) -> str:
    items = list(items)
    return "\n".join(f"- {x}" for x in items) if items else NONE_TEXT


def _budgeted(texts: list[str], budget: int) -> list[str]:
    out, used = [], 0
    for text in texts:
        room = budget - used
        if room <= 0:
            break
        piece = text if len(text) <= room else text[:room].rstrip()
        out.append(piece)
        used += len(piece)
    return out


def build_summary_prompt(
    bundle: EnhancementBundle,
    template_version: str = "v1",
    knowledge_budget: int = DEFAULT_KNOWLEDGE_BUDGET,
) -> str:
    template = load_template("summary", template_version)
    return template.format(
        abnormal_features=_lines(m.surface for m in bundle.abnormal_features),
        diseases=_lines(bundle.diseases),
        knowledge=_lines(_budgeted(bundle.knowledge_texts, knowledge_budget)),
        triples=_lines(f"{h} — {r} — {t}" for h, r, t in bundle.triples),
    )


def generate_summary(
    bundle: EnhancementBundle,
    gateway,
    profile: str = SUMMARIZER_PROFILE,
    template_version: str = "v1",
    knowledge_budget: int = DEFAULT_KNOWLEDGE_BUDGET,
) -> str:
    """Generate and store ``bundle.summary``.

    A content-policy refusal yields the literal ``"None"`` and sets
    ``bundle.summary_fallback``; an empty reply is treated the same way.
    Transport errors propagate.
    """
    prompt = build_summary_prompt(bundle, template_version, knowledge_budget)
    try:
        text = gateway.chat(ChatRequest(profile=profile, prompt=prompt)).text.strip()
        fallback = not text
    except ContentRisk as exc:
        logger.warning("summary for %s refused (%s); substituting %r", bundle.patient_id, exc, NONE_TEXT)
        text, fallback = "", True
    if fallback:
        text = NONE_TEXT
    bundle.summary = text
    bundle.summary_fallback = fallback
    return text

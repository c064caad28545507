"""Clinical note normalization."""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

# MIMIC-style de-identification markers, e.g. "[**First Name (Titles) 123**]".
DEFAULT_PLACEHOLDER_PATTERNS: tuple[str, ...] = (r"\[\*\*.*?\*\*\]",)

_NON_ALNUM = re.compile(r"[^0-9A-Za-z]+")


@dataclass(frozen=True)
class ClinicalNote:
    text: str
    raw_length: int = 0


@lru_cache(maxsize=32)
def _compile(patterns: tuple[str, ...]) -> tuple[re.Pattern, ...]:
    return tuple(re.compile(p, re.DOTALL) for p in patterns)


def normalize_note(
    raw: str, placeholder_patterns: Sequence[str] = DEFAULT_PLACEHOLDER_PATTERNS
) -> ClinicalNote:
    """Strip placeholders, punctuation and case; squeeze whitespace.

    Idempotent for any pattern set whose matches need punctuation to occur
    (the default MIMIC marker does).
    """
    text = raw
    for pat in _compile(tuple(placeholder_patterns)):
        text = pat.sub(" ", text)
    text = _NON_ALNUM.sub(" ", text).strip().lower()
    return ClinicalNote(text=text, raw_length=len(raw))

"""Deterministic offline backends.

These stand in for hosted models in tests and in fully offline runs of the
pipeline on synthetic data.
"""

from __future__ import annotations

import hashlib
import re
from typing import Callable, Iterable, Sequence

import numpy as np

from .client import ContentRisk, TransportError

_TOKEN = re.compile(r"[0-9a-z]+")


class HashEmbedder:
    """Signed feature hashing of lowercased word tokens.

    Each token adds ``±1`` to ``n_hashes`` distinct buckets chosen by SHA-256, so
    texts sharing words tend to have positive cosine similarity and identical bags of
    words embed identically. Empty text embeds to the zero vector.
    """

    def __init__(self, dim: int = 256, n_hashes: int = 2, seed: int = 0):
        self.dim = dim
        self.n_hashes = n_hashes
        self.seed = seed
        self._token_cache: dict[str, list[tuple[int, float]]] = {}

    def _slots(self, token: str) -> list[tuple[int, float]]:
        slots = self._token_cache.get(token)
        if slots is None:
            slots, used, k = [], set(), 0
            # Distinct buckets, so a token can never cancel itself out.
            while len(slots) < min(self.n_hashes, self.dim):
                h = hashlib.sha256(f"{self.seed}:{k}:{token}".encode()).digest()
                idx = int.from_bytes(h[:8], "little") % self.dim
                k += 1
                if idx in used:
                    continue
                used.add(idx)
                slots.append((idx, 1.0 if h[8] & 1 else -1.0))
            self._token_cache[token] = slots
        return slots

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        for token in _TOKEN.findall(text.lower()):
            for idx, sign in self._slots(token):
                vec[idx] += sign
        return vec


class ScriptedChat:
    """Replays canned replies.

    ``replies`` is either a list (consumed in order, the last one repeating)
    or a callable ``prompt -> reply``. ``fail_first`` transient failures are
    raised before the first success; ``refuse`` (bool or predicate over the
    prompt) raises ``ContentRisk``.
    """

    def __init__(
        self,
        replies: Sequence[str] | Callable[[str], str] = ("",),
        *,
        fail_first: int = 0,
        refuse: bool | Callable[[str], bool] = False,
    ):
        self.replies = replies
        self.fail_first = fail_first
        self.refuse = refuse
        self.prompts: list[str] = []
        self.calls = 0

    def complete(self, prompt: str, *, temperature: float = 0.0, max_tokens: int = 1024) -> str:
        self.calls += 1
        if self.fail_first > 0:
            self.fail_first -= 1
            raise TransportError("scripted transient failure")
        refuse = self.refuse(prompt) if callable(self.refuse) else self.refuse
        if refuse:
            raise ContentRisk("Content Exists Risk")
        self.prompts.append(prompt)
        if callable(self.replies):
            return self.replies(prompt)
        idx = min(len(self.prompts) - 1, len(self.replies) - 1)
        return self.replies[idx]


def _section(prompt: str, header: str, stop: str) -> str:
    start = prompt.rfind(header)
    if start < 0:
        return ""
    start += len(header)
    end = prompt.find(stop, start)
    return prompt[start:end if end >= 0 else None].strip()


class KeywordChat:
    """Rule-based stand-in for the extraction, type-filter and summary models.

    Extraction replies list every vocabulary term occurring in the note (plus
    any ``hallucinations``); the type filter says yes exactly for vocabulary
    terms; summaries restate the listed findings and diseases.
    """

    def __init__(self, vocabulary: Iterable[str], hallucinations: Iterable[str] = ()):
        self.vocabulary = sorted({v.lower() for v in vocabulary}, key=lambda v: (-len(v), v))
        self.hallucinations = list(hallucinations)

    def complete(self, prompt: str, *, temperature: float = 0.0, max_tokens: int = 1024) -> str:
        if "decide whether it names a disease" in prompt:
            return self._verdicts(prompt)
        if "Diseases mentioned in the clinical notes:" in prompt:
            return self._summary(prompt)
        if "Clinical note:" in prompt:
            return self._extract(prompt)
        return "none"

    def _extract(self, prompt: str) -> str:
        note = " " + _section(prompt, "Clinical note:\n", "\n\nDiseases:") + " "
        found = [v for v in self.vocabulary if f" {v} " in note]
        found += self.hallucinations
        return ", ".join(found) if found else "none"

    def _verdicts(self, prompt: str) -> str:
        terms = [line[2:].strip() for line in _section(prompt, "Terms:\n", "\n\n").splitlines()]
        vocab = set(self.vocabulary)
        return "\n".join(f"{t}: {'yes' if t in vocab else 'no'}" for t in terms if t)

    def _summary(self, prompt: str) -> str:
        feats = _section(prompt, "Abnormal laboratory findings:\n", "\n\n")
        dis = _section(prompt, "Diseases mentioned in the clinical notes:\n", "\n\n")
        feats = "none" if feats == "None" else ", ".join(l.lstrip("- ") for l in feats.splitlines())
        dis = "none" if dis == "None" else ", ".join(l.lstrip("- ") for l in dis.splitlines())
        return (
            f"Abnormal findings: {feats}. Documented conditions: {dis}. "
            "Risk for in-hospital mortality and 30-day readmission should be judged accordingly."
        )

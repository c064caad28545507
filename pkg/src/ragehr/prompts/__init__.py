"""Versioned prompt templates shipped as package data."""

from __future__ import annotations

from functools import lru_cache
from importlib import resources


@lru_cache(maxsize=None)
def load_template(name: str, version: str = "v1", part: str | None = None) -> str:
    """Text of ``<name>_<version>[.<part>].txt`` without its trailing newline."""
    suffix = f".{part}" if part else ""
    ref = resources.files(__package__).joinpath(f"{name}_{version}{suffix}.txt")
    if not ref.is_file():
        raise FileNotFoundError(f"no prompt template {name!r} version {version!r} part {part!r}")
    return ref.read_text(encoding="utf-8").rstrip("\n")

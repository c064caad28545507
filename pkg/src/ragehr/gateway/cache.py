"""Content-addressed on-disk response cache."""

from __future__ import annotations

import json
import os
import tempfile
from datetime import datetime, timezone
from pathlib import Path


class DiskCache:
    """One JSON file per request under ``<root>/<profile>/<hash>.json``.

    Entries are immutable: a write never replaces an existing file. Writes go
    through a temp file and ``os.replace`` so readers never see partial JSON.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.hits = 0
        self.misses = 0

    def path_for(self, profile: str, key: str) -> Path:
        return self.root / profile / f"{key}.json"

    def get(self, profile: str, key: str) -> dict | None:
        path = self.path_for(profile, key)
        try:
            with open(path, encoding="utf-8") as fh:
                entry = json.load(fh)
        except FileNotFoundError:
            self.misses += 1
            return None
        self.hits += 1
        return entry

    def put(self, profile: str, key: str, payload: dict) -> None:
        path = self.path_for(profile, key)
        if path.exists():
            return
        path.parent.mkdir(parents=True, exist_ok=True)
        entry = {
            "request_hash": key,
            **payload,
            "created_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        }
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".json")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(entry, fh)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

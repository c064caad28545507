"""Patient data model and JSONL ingestion."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..errors import ValidationError
from .notes import DEFAULT_PLACEHOLDER_PATTERNS, ClinicalNote, normalize_note

logger = logging.getLogger(__name__)

MAX_VISITS = 48
FEATURE_KINDS = ("numeric", "categorical")


class PatientParseError(ValidationError):
    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")


@dataclass(frozen=True)
class FeatureSpec:
    index: int
    name: str
    kind: str = "numeric"

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise ValidationError(f"feature {self.name!r}: unknown kind {self.kind!r}")


def validate_feature_specs(specs: Sequence[FeatureSpec]) -> None:
    if not specs:
        raise ValidationError("at least one feature is required")
    if [s.index for s in specs] != list(range(len(specs))):
        raise ValidationError("feature indices must be contiguous 0..F-1 in order")
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ValidationError("feature names must be unique")


@dataclass(frozen=True, eq=False)
class TimeSeriesMatrix:
    """T x F grid of visits; missing cells are NaN."""

    values: np.ndarray
    feature_specs: tuple[FeatureSpec, ...]
    max_visits: int = MAX_VISITS

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValidationError("time-series values must be a 2-D grid")
        specs = tuple(self.feature_specs)
        validate_feature_specs(specs)
        t, f = values.shape
        if f != len(specs):
            raise ValidationError(f"grid has {f} columns but {len(specs)} features declared")
        if not 1 <= t <= self.max_visits:
            raise ValidationError(f"visit count {t} outside 1..{self.max_visits}")
        if np.isinf(values).any():
            raise ValidationError("time-series values must be finite or missing")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "feature_specs", specs)

    @property
    def visit_count(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.values)

    def __eq__(self, other):
        if not isinstance(other, TimeSeriesMatrix):
            return NotImplemented
        return (
            self.feature_specs == other.feature_specs
            and self.values.shape == other.values.shape
            and np.array_equal(self.values, other.values, equal_nan=True)
        )

    __hash__ = None


@dataclass(frozen=True)
class PatientRecord:
    id: str
    ts: TimeSeriesMatrix
    note: ClinicalNote
    label_mortality: int
    label_readmission: int

    def __post_init__(self):
        for name in ("label_mortality", "label_readmission"):
            if getattr(self, name) not in (0, 1):
                raise ValidationError(f"patient {self.id}: {name} must be 0 or 1")

    def label(self, task: str) -> int:
        if task == "mortality":
            return self.label_mortality
        if task == "readmission":
            return self.label_readmission
        raise ValidationError(f"unknown task {task!r}")


_REQUIRED = ("id", "features", "values", "note", "label_mortality", "label_readmission")


def patient_from_dict(
    obj: dict,
    *,
    line: int | None = None,
    max_visits: int = MAX_VISITS,
    placeholder_patterns: Sequence[str] = DEFAULT_PLACEHOLDER_PATTERNS,
) -> PatientRecord:
    if not isinstance(obj, dict):
        raise PatientParseError("expected a JSON object", line)
    for key in _REQUIRED:
        if key not in obj:
            raise PatientParseError(f"missing field {key!r}", line, key)
    try:
        specs = tuple(
            FeatureSpec(int(f["index"]), str(f["name"]), str(f.get("kind", "numeric")))
            for f in obj["features"]
        )
    except (KeyError, TypeError) as exc:
        raise PatientParseError(f"malformed feature list ({exc})", line, "features") from None

    rows = obj["values"]
    if not isinstance(rows, list) or not rows:
        raise PatientParseError("values must be a non-empty list of visits", line, "values")
    if len(rows) > max_visits:
        logger.warning(
            "patient %s has %d visits; keeping the first %d", obj["id"], len(rows), max_visits
        )
        rows = rows[:max_visits]
    try:
        grid = np.array(
            [[np.nan if v is None else float(v) for v in row] for row in rows], dtype=np.float64
        )
    except (TypeError, ValueError) as exc:
        raise PatientParseError(f"non-numeric cell ({exc})", line, "values") from None

    note_raw = obj["note"]
    if not isinstance(note_raw, str):
        raise PatientParseError("note must be a string", line, "note")
    try:
        ts = TimeSeriesMatrix(grid, specs, max_visits=max_visits)
        return PatientRecord(
            id=str(obj["id"]),
            ts=ts,
            note=normalize_note(note_raw, placeholder_patterns),
            label_mortality=obj["label_mortality"],
            label_readmission=obj["label_readmission"],
        )
    except PatientParseError:
        raise
    except ValidationError as exc:
        raise PatientParseError(str(exc), line) from None


def patient_to_dict(record: PatientRecord) -> dict:
    return {
        "id": record.id,
        "features": [
            {"index": s.index, "name": s.name, "kind": s.kind} for s in record.ts.feature_specs
        ],
        "values": [
            [None if np.isnan(v) else _plain_number(v) for v in row] for row in record.ts.values
        ],
        "note": record.note.text,
        "label_mortality": record.label_mortality,
        "label_readmission": record.label_readmission,
    }


def _plain_number(v: float):
    return int(v) if float(v).is_integer() else float(v)


def load_patients(
    path: str | Path,
    format: str = "jsonl",
    *,
    max_visits: int = MAX_VISITS,
    placeholder_patterns: Sequence[str] = DEFAULT_PLACEHOLDER_PATTERNS,
) -> list[PatientRecord]:
    """Read a patients file, preserving file order.

    Raises ``PatientParseError`` (with the 1-based line number) on the first
    malformed line and ``ValidationError`` on duplicate ids.
    """
    if format != "jsonl":
        raise ValidationError(f"unsupported patient file format {format!r}")
    records: list[PatientRecord] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise PatientParseError(f"invalid JSON ({exc.msg})", lineno) from None
            rec = patient_from_dict(
                obj, line=lineno, max_visits=max_visits, placeholder_patterns=placeholder_patterns
            )
            if rec.id in seen:
                raise ValidationError(f"line {lineno}: duplicate patient id {rec.id!r}")
            seen.add(rec.id)
            records.append(rec)
    return records


def write_patients(records: Iterable[PatientRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(patient_to_dict(rec)) + "\n")


def validate_cohort(records: Sequence[PatientRecord]) -> None:
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise ValidationError("patient ids must be unique within a cohort")
    if records:
        specs = records[0].ts.feature_specs
        for r in records:
            if r.ts.feature_specs != specs:
                raise ValidationError(f"patient {r.id}: feature layout differs from cohort")


@dataclass(frozen=True)
class VisitEvent:
    """One raw measurement, hours since admission."""

    hour: float
    feature_index: int
    value: float


def consolidate(
    events: Iterable[VisitEvent],
    feature_specs: Sequence[FeatureSpec],
    window_hours: float = 12.0,
    max_visits: int = MAX_VISITS,
) -> TimeSeriesMatrix:
    """Collapse per-event rows into fixed windows.

    Numeric features take the window mean; categorical features keep the
    last observation in the window. Windows with no events at all are
    dropped, so the result only holds observed visits.
    """
    if window_hours <= 0:
        raise ValidationError("window_hours must be positive")
    n_feat = len(feature_specs)
    buckets: dict[int, list[list[tuple[float, float]]]] = {}
    for ev in events:
        if not 0 <= ev.feature_index < n_feat:
            raise ValidationError(f"event feature index {ev.feature_index} out of range")
        if ev.hour < 0:
            continue
        w = int(ev.hour // window_hours)
        cells = buckets.setdefault(w, [[] for _ in range(n_feat)])
        cells[ev.feature_index].append((ev.hour, ev.value))
    if not buckets:
        raise ValidationError("no events to consolidate")
    rows = []
    for w in sorted(buckets)[:max_visits]:
        row = []
        for spec, obs in zip(feature_specs, buckets[w]):
            if not obs:
                row.append(np.nan)
            elif spec.kind == "categorical":
                row.append(max(obs, key=lambda o: o[0])[1])
            else:
                row.append(float(np.mean([v for _, v in obs])))
        rows.append(row)
    return TimeSeriesMatrix(np.array(rows), tuple(feature_specs), max_visits=max_visits)

"""EHR data model, ingestion, splitting and synthetic cohorts."""

from .notes import ClinicalNote, normalize_note
from .records import (
    MAX_VISITS,
    FeatureSpec,
    PatientParseError,
    PatientRecord,
    TimeSeriesMatrix,
    VisitEvent,
    consolidate,
    load_patients,
    write_patients,
)
from .split import CohortSplit, split_cohort

__all__ = [
    "MAX_VISITS",
    "ClinicalNote",
    "CohortSplit",
    "FeatureSpec",
    "PatientParseError",
    "PatientRecord",
    "TimeSeriesMatrix",
    "VisitEvent",
    "consolidate",
    "load_patients",
    "normalize_note",
    "split_cohort",
    "write_patients",
]

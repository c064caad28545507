"""Abnormal-feature extraction from lab time series via z-scores."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import ValidationError

logger = logging.getLogger(__name__)

DEFAULT_EPSILON = 2.0


@dataclass(frozen=True)
class EntityMention:
    surface: str
    source: str  # "timeseries" | "note"
    direction: str | None = None
    feature_index: int | None = None
    zscore: float | None = None

    def __post_init__(self):
        ts_fields = (self.direction, self.feature_index, self.zscore)
        if self.source == "timeseries":
            if any(v is None for v in ts_fields):
                raise ValidationError("timeseries mentions need direction, feature_index and zscore")
            if self.direction not in ("high", "low"):
                raise ValidationError(f"bad direction {self.direction!r}")
        elif self.source == "note":
            if any(v is not None for v in ts_fields):
                raise ValidationError("note mentions carry no direction/feature_index/zscore")
        else:
            raise ValidationError(f"unknown mention source {self.source!r}")

    @classmethod
    def from_note(cls, surface: str) -> "EntityMention":
        return cls(surface=surface, source="note")

    def to_dict(self) -> dict:
        if self.source == "note":
            return {"surface": self.surface}
        return {
            "surface": self.surface,
            "direction": self.direction,
            "feature_index": self.feature_index,
            "zscore": self.zscore,
        }


@dataclass(frozen=True, eq=False)
class FeatureStats:
    """Per-feature mean/std over non-missing cells (population std, ddof=0).

    ``available[i]`` is False for features that had no observations or that
    are categorical; those are never z-scored.
    """

    mean: np.ndarray
    std: np.ndarray
    n_observations: np.ndarray
    available: np.ndarray
    source: str = "population"

    def __post_init__(self):
        for name in ("mean", "std", "n_observations", "available"):
            arr = np.array(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return len(self.mean)

    def to_dict(self) -> dict:
        return {
            "source": self.source,
            "mean": [None if not a else float(m) for m, a in zip(self.mean, self.available)],
            "std": [None if not a else float(s) for s, a in zip(self.std, self.available)],
            "n_observations": [int(n) for n in self.n_observations],
        }


def _stats_from_grid(grid: np.ndarray, categorical: np.ndarray, source: str) -> FeatureStats:
    observed = ~np.isnan(grid)
    n_obs = observed.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        filled = np.where(observed, grid, 0.0)
        mean = filled.sum(axis=0) / n_obs
        dev = np.where(observed, grid - mean, 0.0)
        std = np.sqrt((dev * dev).sum(axis=0) / n_obs)
    available = (n_obs > 0) & ~categorical
    mean = np.where(n_obs > 0, mean, np.nan)
    std = np.where(n_obs > 0, std, np.nan)
    return FeatureStats(mean, std, n_obs, available, source)


def _categorical_mask(specs) -> np.ndarray:
    return np.array([s.kind == "categorical" for s in specs], dtype=bool)


class PerPatientStats:
    """Lazily computed per-record statistics, keyed by patient id."""

    source = "per_patient"

    def __init__(self, records=()):
        self._records = {r.id: r for r in records}
        self._cache: dict[str, FeatureStats] = {}

    def for_matrix(self, ts) -> FeatureStats:
        return _stats_from_grid(ts.values, _categorical_mask(ts.feature_specs), "per_patient")

    def __getitem__(self, patient_id: str) -> FeatureStats:
        if patient_id not in self._cache:
            self._cache[patient_id] = self.for_matrix(self._records[patient_id].ts)
        return self._cache[patient_id]


def compute_feature_stats(train: Sequence, mode: str = "population"):
    """Statistics for z-scoring.

    ``population`` pools every visit of every training patient and returns a
    ``FeatureStats``; ``per_patient`` returns a lazy ``PerPatientStats``.
    """
    if not train:
        raise ValidationError("cannot compute statistics over an empty cohort")
    if mode == "per_patient":
        return PerPatientStats(train)
    if mode != "population":
        raise ValidationError(f"unknown statistics mode {mode!r}")
    specs = train[0].ts.feature_specs
    grid = np.vstack([r.ts.values for r in train])
    stats = _stats_from_grid(grid, _categorical_mask(specs), "population")
    for i in np.flatnonzero(stats.n_observations == 0):
        logger.warning("feature %s has no observations; z-scores unavailable", specs[i].name)
    return stats


class ZScore(NamedTuple):
    value: float
    degenerate: bool


def zscore(value: float, mean: float, std: float) -> ZScore:
    """``(value - mean) / std``; a zero std gives a flagged 0.0."""
    if std == 0:
        return ZScore(0.0, True)
    return ZScore((value - mean) / std, False)


def zscore_matrix(values: np.ndarray, stats: FeatureStats) -> np.ndarray:
    """Elementwise z-scores; NaN where missing or the feature is unavailable."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape[1] != len(stats):
        raise ValidationError("matrix width does not match the statistics")
    safe_std = np.where(stats.std > 0, stats.std, 1.0)
    z = (values - stats.mean) / safe_std
    z = np.where(stats.std > 0, z, 0.0)
    z = np.where(np.isnan(values), np.nan, z)
    z[:, ~stats.available] = np.nan
    return z


def phrase(feature_name: str, direction: str) -> str:
    return f"{feature_name} too {direction}"


def extract_ts_entities(ts, stats, epsilon: float = DEFAULT_EPSILON) -> list[EntityMention]:
    """One mention per feature whose |z| reaches ``epsilon`` in any visit.

    The mention carries the extremal z-score (first visit wins on ties of
    magnitude) and its sign decides high/low.
    """
    if not epsilon > 0:
        raise ValidationError(f"epsilon must be positive, got {epsilon}")
    if isinstance(stats, PerPatientStats):
        stats = stats.for_matrix(ts)
    z = zscore_matrix(ts.values, stats)
    mentions = []
    for spec in ts.feature_specs:
        if spec.kind == "categorical":
            logger.debug("skipping categorical feature %s", spec.name)
            continue
        col = z[:, spec.index]
        observed = ~np.isnan(col)
        if not observed.any():
            continue
        mags = np.where(observed, np.abs(col), -1.0)
        t = int(np.argmax(mags))
        if mags[t] >= epsilon:
            direction = "high" if col[t] > 0 else "low"
            mentions.append(
                EntityMention(
                    surface=phrase(spec.name, direction),
                    source="timeseries",
                    direction=direction,
                    feature_index=spec.index,
                    zscore=float(col[t]),
                )
            )
    return mentions


def standardize(values: np.ndarray, stats: FeatureStats) -> np.ndarray:
    """Model input: z-scores with missing/unavailable cells set to 0 (the mean).

    Categorical codes are standardized with their pooled stats too; they are
    only exempt from abnormality flagging.
    """
    values = np.asarray(values, dtype=np.float64)
    observed = stats.n_observations > 0
    safe_std = np.where(observed & (stats.std > 0), stats.std, 1.0)
    mean = np.where(observed, stats.mean, 0.0)
    z = (values - mean) / safe_std
    return np.where(np.isnan(z), 0.0, z)


def write_entities_line(patient_id: str, mentions: Iterable[EntityMention]) -> dict:
    return {"patient_id": patient_id, "mentions": [m.to_dict() for m in mentions]}

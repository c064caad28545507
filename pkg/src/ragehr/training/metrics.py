"""Ranking metrics for binary outcomes and bootstrap reporting."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import UndefinedMetricError, ValidationError

METRICS = ("auroc", "auprc", "min_p_se")
DEFAULT_BOOTSTRAP = 10
MAX_REDRAWS = 100


def _as_arrays(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValidationError(f"{s.size} scores but {y.size} labels")
    if s.size == 0:
        raise UndefinedMetricError("no samples")
    if not np.isfinite(s).all():
        raise ValidationError("scores contain non-finite values")
    if not np.isin(y, (0, 1)).all():
        raise ValidationError("labels must be 0 or 1")
    return s, y.astype(np.int64)


def _both_classes(y: np.ndarray, name: str) -> tuple[int, int]:
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(f"{name} needs both classes (got {n_pos} positive, {n_neg} negative)")
    return n_pos, n_neg


def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC; tied positive/negative pairs count one half."""
    s, y = _as_arrays(scores, labels)
    n_pos, n_neg = _both_classes(y, "AUROC")
    # average ranks (1-based) over tie groups
    uniq, inverse, counts = np.unique(s, return_inverse=True, return_counts=True)
    upper = np.cumsum(counts)
    avg_rank = upper - (counts - 1) / 2.0
    rank_sum = avg_rank[inverse][y == 1].sum()
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _threshold_counts(s: np.ndarray, y: np.ndarray):
    """True/false positive counts when predicting positive for score >= t,
    one entry per distinct score t in descending order."""
    order = np.argsort(-s, kind="mergesort")
    s_sorted, y_sorted = s[order], y[order]
    ends = np.r_[np.nonzero(np.diff(s_sorted))[0], s_sorted.size - 1]
    tp = np.cumsum(y_sorted)[ends]
    fp = (ends + 1) - tp
    return tp, fp


def auprc(scores, labels) -> float:
    """Average precision: sum of precision times recall increments over
    descending thresholds, tied scores forming one threshold."""
    s, y = _as_arrays(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise UndefinedMetricError("AUPRC needs at least one positive")
    tp, fp = _threshold_counts(s, y)
    precision = tp / (tp + fp)
    recall = tp / n_pos
    delta = np.diff(np.r_[0.0, recall])
    return float(np.sum(delta * precision))


def min_p_se(scores, labels) -> float:
    """Best achievable min(precision, sensitivity) over score thresholds."""
    s, y = _as_arrays(scores, labels)
    n_pos, _ = _both_classes(y, "min(+P, Se)")
    tp, fp = _threshold_counts(s, y)
    return float(np.max(np.minimum(tp / (tp + fp), tp / n_pos)))


METRIC_FUNCTIONS = {"auroc": auroc, "auprc": auprc, "min_p_se": min_p_se}


def point_metrics(scores, labels) -> dict[str, float]:
    return {name: fn(scores, labels) for name, fn in METRIC_FUNCTIONS.items()}


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    std: float


@dataclass
class EvalReport:
    metrics: dict[str, MetricSummary]
    n_bootstrap: int
    seed: int
    config: dict = field(default_factory=dict)
    resample_indices: list[list[int]] = field(default_factory=list, repr=False)
    per_resample: list[dict[str, float]] = field(default_factory=list, repr=False)

    def __getitem__(self, name: str) -> MetricSummary:
        return self.metrics[name]

    def to_dict(self) -> dict:
        """JSON form; resample indices are kept out (see ``indices_dict``)."""
        out = {name: {"mean": m.mean, "std": m.std} for name, m in self.metrics.items()}
        out["n_bootstrap"] = self.n_bootstrap
        out["seed"] = self.seed
        out["config"] = self.config
        return out

    def indices_dict(self) -> dict:
        return {"seed": self.seed, "resample_indices": self.resample_indices}

    @classmethod
    def from_dict(cls, obj: dict, indices: dict | None = None) -> "EvalReport":
        return cls(
            metrics={k: MetricSummary(obj[k]["mean"], obj[k]["std"]) for k in METRICS},
            n_bootstrap=obj["n_bootstrap"],
            seed=obj["seed"],
            config=obj.get("config", {}),
            resample_indices=(indices or {}).get("resample_indices", []),
        )


Resampler = Callable[[np.random.Generator, int], np.ndarray]


def _draw(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.integers(0, n, size=n)


def summarize(per_resample: list[dict[str, float]]) -> dict[str, MetricSummary]:
    out = {}
    for name in METRICS:
        vals = np.array([r[name] for r in per_resample], dtype=np.float64)
        out[name] = MetricSummary(float(vals.mean()), float(vals.std(ddof=0)))
    return out


def bootstrap_eval(
    scores,
    labels,
    n: int = DEFAULT_BOOTSTRAP,
    seed: int = 0,
    *,
    config: dict | None = None,
    max_redraws: int = MAX_REDRAWS,
    resampler: Resampler = _draw,
) -> EvalReport:
    """Bootstrap mean and population std of every metric.

    Each resample draws ``len(scores)`` indices with replacement; a resample
    holding a single class is redrawn, and ``max_redraws`` consecutive
    single-class draws raise ``UndefinedMetricError``.
    """
    if n < 1:
        raise ValidationError("n_bootstrap must be >= 1")
    s, y = _as_arrays(scores, labels)
    _both_classes(y, "bootstrap evaluation")
    rng = np.random.default_rng(seed)
    indices, per_resample = [], []
    for b in range(n):
        for _ in range(max_redraws):
            idx = np.asarray(resampler(rng, s.size), dtype=np.int64)
            yb = y[idx]
            if 0 < yb.sum() < yb.size:
                break
        else:
            raise UndefinedMetricError(
                f"resample {b}: {max_redraws} consecutive single-class draws; test set is degenerate"
            )
        indices.append(idx.tolist())
        per_resample.append(point_metrics(s[idx], yb))
    return EvalReport(summarize(per_resample), n, seed, dict(config or {}), indices, per_resample)


def replay(scores, labels, resample_indices) -> dict[str, MetricSummary]:
    """Recompute summaries from logged resample indices."""
    s, y = _as_arrays(scores, labels)
    return summarize([point_metrics(s[np.asarray(i)], y[np.asarray(i)]) for i in resample_indices])




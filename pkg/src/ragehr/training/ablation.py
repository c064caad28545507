"""Ablation, sparsity and sensitivity suites."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ValidationError
from ..model import ModelBatch
from .data import SplitBatches
from .metrics import EvalReport
from .trainer import TrainingConfig, evaluate_model, fit

logger = logging.getLogger(__name__)

SUITES = ("modality", "internal_fusion", "sparsity", "sensitivity")

MODALITY_CELLS = {
    "TS": ("ts",),
    "Note": ("note",),
    "RAG": ("rag",),
    "TS+Note": ("ts", "note"),
    "TS+RAG": ("ts", "rag"),
    "Note+RAG": ("note", "rag"),
    "TS+Note+RAG": ("ts", "note", "rag"),
}
FUSION_CELLS = {
    "ours": "cross",
    "ts-query-only": "ts_query",
    "text-query-only": "text_query",
    "self-attention": "self_attention",
    "concat": "concat",
}
SPARSITY_FRACTIONS = (0.01, 0.2, 0.4, 0.6, 0.8)
CSV_COLUMNS = ("suite", "cell", "auroc_mean", "auroc_std", "auprc_mean", "auprc_std", "minpse_mean", "minpse_std")


@dataclass
class AblationRow:
    suite: str
    cell: str
    report: EvalReport | None
    error: str | None = None

    def csv_row(self) -> list:
        if self.report is None:
            return [self.suite, self.cell] + [""] * 6
        m = self.report.metrics
        return [
            self.suite, self.cell,
            m["auroc"].mean, m["auroc"].std,
            m["auprc"].mean, m["auprc"].std,
            m["min_p_se"].mean, m["min_p_se"].std,
        ]


def stratified_indices(labels, fraction: float, seed: int) -> np.ndarray:
    """Seeded per-class subsample keeping ``round(fraction * n_class)`` (at
    least one) members of each class, returned in original order."""
    if not 0 < fraction <= 1:
        raise ValidationError("fraction must lie in (0, 1]")
    y = np.asarray(labels).astype(int)
    if fraction == 1:
        return np.arange(y.size)
    rng = np.random.default_rng(seed)
    keep = []
    for cls in (0, 1):
        members = np.flatnonzero(y == cls)
        if members.size == 0:
            continue
        k = max(1, int(round(fraction * members.size)))
        keep.append(rng.choice(members, size=k, replace=False))
    return np.sort(np.concatenate(keep))


def subsample(batch: ModelBatch, fraction: float, seed: int) -> ModelBatch:
    return batch.select(stratified_indices(batch.y.numpy(), fraction, seed))


def _cells(suite: str, config: TrainingConfig):
    if suite == "modality":
        for name, mods in MODALITY_CELLS.items():
            yield name, {"modalities": mods}
    elif suite == "internal_fusion":
        for name, variant in FUSION_CELLS.items():
            yield name, {"fusion": variant}
    elif suite == "sparsity":
        for frac in SPARSITY_FRACTIONS:
            yield f"{frac * 100:g}%", {"fraction": frac}
    elif suite == "sensitivity":
        for d in config.hidden_grid:
            yield f"hidden_dim={d}", {"hidden_dim": d}
        for lr in config.lr_grid:
            yield f"learning_rate={lr:g}", {"learning_rate": lr}
    else:
        raise ValidationError(f"unknown ablation suite {suite!r}; expected one of {SUITES}")


def run_cell(data: SplitBatches, config: TrainingConfig, fit_fn=fit, **settings) -> EvalReport:
    settings = dict(settings)
    fraction = settings.pop("fraction", None)
    if fraction is not None:
        settings["train_batch"] = subsample(data.train, fraction, config.seed)
    result = fit_fn(data, config, **settings)
    extra = {"cell": {k: v for k, v in settings.items() if k != "train_batch"}}
    if fraction is not None:
        extra["cell"]["fraction"] = fraction
    extra["best_epoch"] = result.best_epoch
    return evaluate_model(result.model, data.test, config, extra)


def run_ablation(suite: str, data: SplitBatches, config: TrainingConfig, fit_fn=fit) -> list[AblationRow]:
    """One EvalReport per cell; failing cells are annotated, not fatal."""
    rows = []
    for name, settings in list(_cells(suite, config)):
        try:
            rows.append(AblationRow(suite, name, run_cell(data, config, fit_fn, **settings)))
        except Exception as exc:  # noqa: BLE001 - reported in the table
            logger.warning("%s/%s failed: %s", suite, name, exc)
            rows.append(AblationRow(suite, name, None, f"{type(exc).__name__}: {exc}"))
    return rows


def write_ablation_csv(rows, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow(row.csv_row())

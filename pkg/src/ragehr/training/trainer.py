"""Mini-batch training with AUPRC early stopping, and grid search."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from ..errors import PipelineRuntimeError, ValidationError
from ..model import MODALITIES, FusionConfig, FusionModel, ModelBatch, bce_loss
from .data import SplitBatches
from .metrics import auprc, bootstrap_eval, EvalReport

logger = logging.getLogger(__name__)


class TrainingDivergedError(PipelineRuntimeError):
    def __init__(self, epoch: int, loss: float):
        self.epoch = epoch
        super().__init__(f"training loss became non-finite ({loss}) in epoch {epoch}")


@dataclass(frozen=True)
class TrainingConfig:
    batch_size: int = 256
    learning_rate: float = 1e-3
    hidden_dim: int = 128
    max_epochs: int = 100
    patience: int = 10
    dropout_rate: float = 0.25
    weight_decay: float = 1e-2
    seed: int = 0
    n_heads: int = 4
    n_bootstrap: int = 10
    lr_grid: tuple[float, ...] = (0.01, 0.001, 0.0001)
    hidden_grid: tuple[int, ...] = (32, 64, 128, 256)

    def __post_init__(self):
        object.__setattr__(self, "lr_grid", tuple(float(x) for x in self.lr_grid))
        object.__setattr__(self, "hidden_grid", tuple(int(x) for x in self.hidden_grid))
        if self.batch_size < 1:
            raise ValidationError("batch_size must be positive")
        if self.max_epochs < 1:
            raise ValidationError("max_epochs must be positive")
        if not 0 < self.patience < self.max_epochs:
            raise ValidationError("patience must be positive and smaller than max_epochs")
        if not self.lr_grid or not self.hidden_grid:
            raise ValidationError("grids must be non-empty")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValidationError("learning_rate and weight_decay must be >= 0")
        if self.n_bootstrap < 1:
            raise ValidationError("n_bootstrap must be >= 1")

    @classmethod
    def from_mapping(cls, mapping: dict) -> "TrainingConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(mapping) - known
        if unknown:
            raise ValidationError(f"unknown training settings: {sorted(unknown)}")
        return cls(**mapping)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["lr_grid"] = list(self.lr_grid)
        out["hidden_grid"] = list(self.hidden_grid)
        return out


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_auprc: float


@dataclass
class TrainResult:
    model: FusionModel
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_auprc: float = float("-inf")

    @property
    def stopped_epoch(self) -> int:
        return self.history[-1].epoch if self.history else 0


def predict(model: FusionModel, batch: ModelBatch) -> np.ndarray:
    """Eval-mode scores (no dropout, running normalization statistics)."""
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            return model(batch).double().numpy()
    finally:
        model.train(was_training)


def validation_auprc(model: FusionModel, batch: ModelBatch, epoch: int) -> float:
    return auprc(predict(model, batch), batch.y.numpy())


def _minibatches(n: int, size: int, generator: torch.Generator) -> list[torch.Tensor]:
    perm = torch.randperm(n, generator=generator)
    chunks = list(torch.split(perm, size))
    # a trailing batch of one would make batch normalization undefined
    if len(chunks) > 1 and len(chunks[-1]) == 1:
        tail = chunks.pop()
        chunks[-1] = torch.cat([chunks[-1], tail])
    return chunks


def train(
    model: FusionModel,
    train_batch: ModelBatch,
    val_batch: ModelBatch,
    config: TrainingConfig,
    evaluate: Callable[[FusionModel, ModelBatch, int], float] = validation_auprc,
    learning_rate: float | None = None,
) -> TrainResult:
    """AdamW training; keeps the parameters of the best validation epoch.

    Stops once ``patience`` consecutive epochs fail to improve on the best
    validation AUPRC. Epochs are numbered from 1.
    """
    if len(train_batch) < 2 or len(val_batch) < 1:
        raise ValidationError("training needs at least 2 training and 1 validation patient")
    lr = config.learning_rate if learning_rate is None else learning_rate
    gen = torch.Generator().manual_seed(config.seed)
    opt = torch.optim.AdamW(model.parameters(), lr=lr, weight_decay=config.weight_decay)
    result = TrainResult(model)
    best_state = copy.deepcopy(model.state_dict())
    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        model.train()
        total, count = 0.0, 0
        for idx in _minibatches(len(train_batch), config.batch_size, gen):
            batch = train_batch.select(idx)
            loss = bce_loss(model(batch, generator=gen), batch.y)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(epoch, float(loss.detach()))
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(idx)
            count += len(idx)
        score = float(evaluate(model, val_batch, epoch))
        if math.isnan(score):
            score = float("-inf")
        result.history.append(EpochRecord(epoch, total / count, score))
        logger.debug("epoch %d loss %.5f val_auprc %.5f", epoch, total / count, score)
        if score > result.best_val_auprc:
            result.best_val_auprc = score
            result.best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    model.load_state_dict(best_state)
    model.eval()
    return result


def _heads_for(hidden_dim: int, preferred: int) -> int:
    for h in range(min(preferred, hidden_dim), 0, -1):
        if hidden_dim % h == 0:
            return h
    return 1


def build_model(
    data: SplitBatches,
    config: TrainingConfig,
    *,
    hidden_dim: int | None = None,
    fusion: str = "cross",
    modalities: Sequence[str] = MODALITIES,
) -> FusionModel:
    d = config.hidden_dim if hidden_dim is None else hidden_dim
    fc = FusionConfig(
        n_features=data.n_features,
        d_text=data.d_text,
        hidden_dim=d,
        n_heads=_heads_for(d, config.n_heads),
        dropout=config.dropout_rate,
        fusion=fusion,
        modalities=tuple(modalities),
    )
    return FusionModel(fc, seed=config.seed)


def fit(
    data: SplitBatches,
    config: TrainingConfig,
    *,
    hidden_dim: int | None = None,
    learning_rate: float | None = None,
    fusion: str = "cross",
    modalities: Sequence[str] = MODALITIES,
    train_batch: ModelBatch | None = None,
    evaluate=validation_auprc,
) -> TrainResult:
    model = build_model(data, config, hidden_dim=hidden_dim, fusion=fusion, modalities=modalities)
    return train(
        model,
        data.train if train_batch is None else train_batch,
        data.val,
        config,
        evaluate=evaluate,
        learning_rate=learning_rate,
    )


def evaluate_model(model: FusionModel, batch: ModelBatch, config: TrainingConfig, extra: dict | None = None) -> EvalReport:
    snapshot = {"training": config.to_dict(), "model": asdict(model.config)}
    snapshot["model"]["modalities"] = list(model.config.modalities)
    snapshot.update(extra or {})
    return bootstrap_eval(predict(model, batch), batch.y.numpy(), n=config.n_bootstrap, seed=config.seed, config=snapshot)


@dataclass(frozen=True)
class GridCell:
    learning_rate: float
    hidden_dim: int
    val_auprc: float | None
    error: str | None = None


@dataclass
class GridSearchResult:
    learning_rate: float
    hidden_dim: int
    cells: list[GridCell]

    @property
    def best(self) -> tuple[float, int]:
        return self.learning_rate, self.hidden_dim


def grid_search(data: SplitBatches, config: TrainingConfig, fit_fn=fit) -> GridSearchResult:
    """Train one model per (lr, d) cell and keep the best validation AUPRC.

    Ties go to the smaller hidden size, then the smaller learning rate. A
    failing cell is recorded and skipped; only an all-failed grid raises.
    """
    cells = []
    for d in config.hidden_grid:
        for lr in config.lr_grid:
            try:
                res = fit_fn(data, config, hidden_dim=d, learning_rate=lr)
                cells.append(GridCell(lr, d, float(res.best_val_auprc)))
            except Exception as exc:  # noqa: BLE001 - recorded per cell
                logger.warning("grid cell lr=%g d=%d failed: %s", lr, d, exc)
                cells.append(GridCell(lr, d, None, f"{type(exc).__name__}: {exc}"))
    ok = [c for c in cells if c.val_auprc is not None]
    if not ok:
        raise PipelineRuntimeError("every grid-search cell failed: " + "; ".join(c.error for c in cells))
    best = max(ok, key=lambda c: (c.val_auprc, -c.hidden_dim, -c.learning_rate))
    return GridSearchResult(best.learning_rate, best.hidden_dim, cells)

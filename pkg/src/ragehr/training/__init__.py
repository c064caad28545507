"""Training, evaluation metrics and ablation harnesses."""

from .ablation import (
    FUSION_CELLS,
    MODALITY_CELLS,
    SPARSITY_FRACTIONS,
    SUITES,
    AblationRow,
    run_ablation,
    run_cell,
    stratified_indices,
    subsample,
    write_ablation_csv,
)
from .data import SplitBatches, make_batch, make_split_batches
from .metrics import (
    METRICS,
    EvalReport,
    MetricSummary,
    auprc,
    auroc,
    bootstrap_eval,
    min_p_se,
    point_metrics,
    replay,
)
from .trainer import (
    EpochRecord,
    GridCell,
    GridSearchResult,
    TrainingConfig,
    TrainingDivergedError,
    TrainResult,
    build_model,
    evaluate_model,
    fit,
    grid_search,
    predict,
    train,
    validation_auprc,
)

__all__ = [
    "SplitBatches",
    "make_batch",
    "make_split_batches",
    "AblationRow",
    "EpochRecord",
    "EvalReport",
    "FUSION_CELLS",
    "GridCell",
    "GridSearchResult",
    "METRICS",
    "MODALITY_CELLS",
    "MetricSummary",
    "SPARSITY_FRACTIONS",
    "SUITES",
    "TrainResult",
    "TrainingConfig",
    "TrainingDivergedError",
    "auprc",
    "auroc",
    "bootstrap_eval",
    "build_model",
    "evaluate_model",
    "fit",
    "grid_search",
    "min_p_se",
    "point_metrics",
    "predict",
    "replay",
    "run_ablation",
    "run_cell",
    "stratified_indices",
    "subsample",
    "train",
    "validation_auprc",
    "write_ablation_csv",
]

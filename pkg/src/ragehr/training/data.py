"""Assemble model batches from patient records and text embeddings."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import torch

from ..errors import ValidationError
from ..model import ModelBatch
from ..ts_entities import FeatureStats, standardize


def make_batch(
    records: Sequence,
    stats: FeatureStats,
    note_vectors: Mapping[str, np.ndarray],
    rag_vectors: Mapping[str, np.ndarray],
    task: str = "mortality",
    pad_to: int | None = None,
    dtype: torch.dtype = torch.float32,
) -> ModelBatch:
    """Stack records into one padded batch.

    Time series are standardized with ``stats`` (missing cells become 0) and
    right-padded with zeros to ``pad_to`` visits (default: longest record).
    """
    if not records:
        raise ValidationError("cannot build a batch from zero records")
    t_max = max(r.ts.visit_count for r in records)
    pad_to = t_max if pad_to is None else pad_to
    if pad_to < t_max:
        raise ValidationError(f"pad_to={pad_to} shorter than the longest record ({t_max} visits)")
    n_feat = records[0].ts.n_features
    ts = np.zeros((len(records), pad_to, n_feat))
    for i, r in enumerate(records):
        ts[i, : r.ts.visit_count] = standardize(r.ts.values, stats)
    try:
        note = np.stack([np.asarray(note_vectors[r.id], dtype=np.float64) for r in records])
        rag = np.stack([np.asarray(rag_vectors[r.id], dtype=np.float64) for r in records])
    except KeyError as exc:
        raise ValidationError(f"no text embedding for patient {exc.args[0]}") from None
    return ModelBatch(
        ts=torch.as_tensor(ts, dtype=dtype),
        lengths=torch.as_tensor([r.ts.visit_count for r in records], dtype=torch.long),
        h_note=torch.as_tensor(note, dtype=dtype),
        h_rag=torch.as_tensor(rag, dtype=dtype),
        y=torch.as_tensor([r.label(task) for r in records], dtype=dtype),
    )


@dataclass
class SplitBatches:
    train: ModelBatch
    val: ModelBatch
    test: ModelBatch

    @property
    def n_features(self) -> int:
        return self.train.ts.shape[-1]

    @property
    def d_text(self) -> int:
        return self.train.h_note.shape[-1]


def make_split_batches(split, stats, note_vectors, rag_vectors, task="mortality") -> SplitBatches:
    return SplitBatches(
        *(make_batch(part, stats, note_vectors, rag_vectors, task) for part in (split.train, split.val, split.test))
    )

"""Patient-level train/val/test splitting."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import ValidationError
from .records import PatientRecord

DEFAULT_RATIOS = (0.7, 0.1, 0.2)


@dataclass(frozen=True)
class CohortSplit:
    train: tuple[PatientRecord, ...]
    val: tuple[PatientRecord, ...]
    test: tuple[PatientRecord, ...]
    seed: int

    @property
    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.val), len(self.test)


def split_sizes(n: int, ratios: Sequence[float] = DEFAULT_RATIOS) -> tuple[int, int, int]:
    """Largest-remainder allocation, forcing every part to be non-empty."""
    if n < 3:
        raise ValidationError(f"cannot split {n} patients into three non-empty parts")
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValidationError(f"ratios must be three positive numbers summing to 1, got {ratios}")
    exact = [n * r for r in ratios]
    sizes = [int(np.floor(x + 1e-9)) for x in exact]
    remainders = sorted(range(3), key=lambda i: (-(exact[i] - sizes[i]), i))
    for i in remainders[: n - sum(sizes)]:
        sizes[i] += 1
    for i in range(3):
        if sizes[i] == 0:
            donor = max(range(3), key=lambda j: sizes[j])
            sizes[donor] -= 1
            sizes[i] = 1
    return sizes[0], sizes[1], sizes[2]


def split_cohort(
    cohort: Sequence[PatientRecord],
    ratios: Sequence[float] = DEFAULT_RATIOS,
    seed: int = 0,
) -> CohortSplit:
    n_train, n_val, _ = split_sizes(len(cohort), ratios)
    order = np.random.default_rng(seed).permutation(len(cohort))
    shuffled = [cohort[i] for i in order]
    return CohortSplit(
        train=tuple(shuffled[:n_train]),
        val=tuple(shuffled[n_train : n_train + n_val]),
        test=tuple(shuffled[n_train + n_val :]),
        seed=seed,
    )

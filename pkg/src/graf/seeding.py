"""Per-stage seed derivation.

Every stochastic step draws its seed from ``stage_seed(base, STAGE, *index)``,
which hashes the base seed, a fixed stage number and the position of the task
(repeat, grid cell, ...) through :class:`numpy.random.SeedSequence`.  Stage
numbers are part of the reproducibility contract and must not be reused:

====================  =====
split generation       0
attention repeats      1
edge elimination       2
GCN training           3
k-means                4
attention-only model   5
====================  =====
"""
from __future__ import annotations

import numpy as np

SPLIT = 0
ATTENTION = 1
ELIMINATION = 2
GCN = 3
KMEANS = 4
HAN = 5


def stage_seed(base: int, stage: int, *index: int) -> int:
    seq = np.random.SeedSequence([int(base), int(stage), *(int(i) for i in index)])
    return int(seq.generate_state(1, dtype=np.uint32)[0])


def stage_seeds(base: int, stage: int, count: int, *index: int) -> list[int]:
    return [stage_seed(base, stage, *index, r) for r in range(count)]

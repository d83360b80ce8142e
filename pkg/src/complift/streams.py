"""Per-sample random streams.

Sample i of a run always draws from the child sequence (seed, spawn_key=(i,)),
so a worker handling samples [lo, hi) reconstructs exactly the streams the
single-process run would use, without the parent having to spawn them all.
"""

from __future__ import annotations

import numpy as np


def sample_stream(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def sample_streams(seed: int, start: int, stop: int) -> list[np.random.Generator]:
    return [sample_stream(seed, i) for i in range(start, stop)]

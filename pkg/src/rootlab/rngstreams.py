"""Reproducible per-trial random streams.

Every Monte Carlo trial draws from its own stream keyed by
(master seed, trial index) through the counter-based Philox generator,
so trial i produces identical draws no matter how trials are batched,
ordered, or spread across lanes.
"""

from __future__ import annotations

import numpy as np

__all__ = ["trial_stream", "RngStream"]


class RngStream:
    """A single trial's generator, keyed by (seed, index)."""

    def __init__(self, master_seed: int, trial_index: int):
        if master_seed < 0 or trial_index < 0:
            raise ValueError("seed and trial index must be non-negative")
        self.master_seed = int(master_seed)
        self.trial_index = int(trial_index)
        key = np.array([self.master_seed, self.trial_index], dtype=np.uint64)
        self.generator = np.random.Generator(np.random.Philox(key=key))

    def __repr__(self):
        return f"RngStream(seed={self.master_seed}, trial={self.trial_index})"


def trial_stream(master_seed: int, trial_index: int) -> RngStream:
    return RngStream(master_seed, trial_index)

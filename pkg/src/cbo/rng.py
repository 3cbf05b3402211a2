"""Deterministic, coordinate-addressed random number streams.

Every Gaussian increment used by the dynamics is drawn from a generator
keyed by (seed, trial, step, channel), so results never depend on thread
count or on the order in which trials or steps are evaluated.
"""

from __future__ import annotations

import numpy as np

# channel ids for the three Brownian increments and auxiliary draws
CHANNEL_CONSENSUS = 1
CHANNEL_MEMORY = 2
CHANNEL_GRADIENT = 3
CHANNEL_INIT = 4
CHANNEL_BATCH = 5
CHANNEL_SUBSET = 6


class RngStream:
    """Counter-based RNG: identical (seed, trial, step, channel) always
    yields identical draws."""

    def __init__(self, seed: int, trial: int = 0):
        self.seed = int(seed)
        self.trial = int(trial)

    def for_trial(self, trial: int) -> "RngStream":
        return RngStream(self.seed, trial)

    def generator(self, step: int, channel: int) -> np.random.Generator:
        ss = np.random.SeedSequence(
            entropy=self.seed, spawn_key=(self.trial, int(step), int(channel))
        )
        return np.random.Generator(np.random.PCG64(ss))

    def gaussians(self, step: int, channel: int, n: int, d: int) -> np.ndarray:
        """Standard-normal matrix, one row per particle."""
        return self.generator(step, channel).standard_normal((n, d))

"""Deterministic derivation of independent random streams from one root seed.

Every source of randomness in the package (user placement, calibration
slot pools, simulation runs, validation replays) draws from its own
substream so that changing, say, the number of calibration iterations
never perturbs the slots a run sees.  Stream ids are fixed constants;
``index`` separates repeated uses of the same purpose (e.g. sweep grid
points).
"""

from __future__ import annotations

import numpy as np

PLACEMENT = 0
CALIBRATION = 1
RUN = 2
VALIDATION = 3

_ENTROPY_MASK = (1 << 63) - 1


def substream(seed: int, stream: int, index: int = 0) -> np.random.Generator:
    """Return the generator for (root seed, stream id, index)."""
    entropy = (int(seed) & _ENTROPY_MASK, int(stream), int(index))
    return np.random.default_rng(np.random.SeedSequence(entropy))

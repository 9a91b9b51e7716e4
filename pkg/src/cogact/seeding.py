"""Single-seed policy.

Every random draw in the pipeline comes from a generator seeded with
``SeedSequence([stream, seed, index])``: the run seed plus a fixed stream id
for the consumer and a counter (player index, fold index, ...). Consumers never
share a generator, so results do not depend on execution order or threads.
"""
from __future__ import annotations

import numpy as np

GENERATOR = 1        # synthetic session of player ``index``
SUBSAMPLE = 2        # row subsampling inside training fold ``index``
BIOMETRIC_PAIRS = 3  # sampling of (positive, negative) pairs
RANDOM_BASELINE = 4  # label shuffle for the random baseline row


def rng(stream: int, seed: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([stream, seed, index]))


def derive_seed(stream: int, seed: int, index: int = 0) -> int:
    """A 32-bit integer seed for components that take a plain int."""
    return int(np.random.SeedSequence([stream, seed, index]).generate_state(1)[0])

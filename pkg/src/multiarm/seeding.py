"""Deterministic RNG substreams.

Every stochastic component draws from a generator derived from the master
seed plus a structured integer path, so results are identical regardless of
worker count or evaluation order.
"""

from __future__ import annotations

import numpy as np

# Stream tags, one per subsystem. Never renumber: digests depend on them.
TAG_TASK = 1
TAG_DATA = 2
TAG_TRAIN = 3
TAG_EPISODE = 4
TAG_PLAN = 5
TAG_TOY = 6
TAG_CYCLE = 7

METHOD_IDS = {"dgmap": 0, "decentralized": 1}


def substream(seed: int, *path: int) -> np.random.Generator:
    """Generator for the substream identified by (seed, path)."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=tuple(path)))

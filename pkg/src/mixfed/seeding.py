"""Deterministic RNG stream derivation.

Every random draw in the simulator comes from a generator keyed by the
experiment root seed plus a fixed stream path (e.g. data/client/sample),
so no RNG state ever needs to be carried across rounds or checkpoints.
"""

from __future__ import annotations

import numpy as np

# stream ids; never renumber, they are part of run reproducibility
DATA_STREAM = 1
SPLIT_STREAM = 2
INIT_STREAM = 3
BATCH_STREAM = 4
PROTO_STREAM = 5


def generator(root_seed: int, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(root_seed), *map(int, keys)])))


def derive_seed(root_seed: int, *keys: int) -> int:
    """Collapse a stream path to a plain int seed for APIs that take one."""
    return int(np.random.SeedSequence([int(root_seed), *map(int, keys)]).generate_state(1)[0])

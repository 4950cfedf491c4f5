from __future__ import annotations
from typing import List

import numpy as np

# Stream families. Each component of a simulation draws from its own
# family so adding draws in one place never shifts another's sequence.
PLATFORM_STREAM = 1
HANDLE_STREAM = 2
HOST_STREAM = 3
LEDGER_STREAM = 4
CLIENT_STREAM = 5
MANUFACTURER_STREAM = 6
WORLD_STREAM = 7


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent PCG64 stream identified by (seed, key...)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def sub_seeds(seed: int, count: int) -> List[int]:
    """Derive `count` independent 64-bit seeds from one scenario seed."""
    children = np.random.SeedSequence(int(seed)).spawn(count)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


def draw_u64(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**64, dtype=np.uint64))

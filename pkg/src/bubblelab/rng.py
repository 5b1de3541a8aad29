"""Counter-based random streams for reproducible, scheduler-independent simulation.

Paths are partitioned into fixed-size blocks.  Each block owns a Philox
generator keyed by ``(seed, purpose, block)`` through ``SeedSequence``, so the
draws a block sees depend only on the seed and the block index, never on how
blocks are scheduled across workers.  Separate ``purpose`` channels keep the
Gaussian increments and the bridge/touch uniforms on independent streams.
"""

from __future__ import annotations

import numpy as np

BLOCK_SIZE = 32768

GAUSSIAN_STREAM = 0
UNIFORM_STREAM = 1


def substream(seed: int, block: int, purpose: int = GAUSSIAN_STREAM) -> np.random.Generator:
    """Generator for one (block, purpose) substream of the given seed."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(purpose), int(block)))
    return np.random.Generator(np.random.Philox(ss))


def iter_blocks(n_paths: int):
    """Yield (block_index, start, stop) covering range(n_paths) in fixed blocks."""
    block = 0
    start = 0
    while start < n_paths:
        stop = min(start + BLOCK_SIZE, n_paths)
        yield block, start, stop
        block += 1
        start = stop


def substream_ids(seed: int, n_paths: int) -> list[tuple[int, int]]:
    """Provenance record: the (seed, block) keys a run will consume."""
    return [(int(seed), block) for block, _, _ in iter_blocks(n_paths)]

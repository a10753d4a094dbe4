"""Counter-based random streams for reproducible path simulation.

Paths are cut into fixed blocks of ``BLOCK_SIZE``. Block ``b`` of logical
substream ``s`` under seed ``seed`` draws from a Philox generator keyed by
``(seed, s)`` whose counter starts at ``b << 192``. A path's draws depend
only on ``(seed, substream, path index)``, never on the total number of
paths or on how blocks are spread over workers.

Substream ids used across the package: ``ASSETS`` (0) for the asset
drivers, ``DEFLATOR`` (1) for noise owned by a deflator (e.g. a squared
Bessel process) and ``INDEPENDENT`` (2) for drivers orthogonal to both.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable

import numpy as np

ASSETS = 0
DEFLATOR = 1
INDEPENDENT = 2

BLOCK_SIZE = 1024
_MASK64 = (1 << 64) - 1


def block_generator(seed: int, substream: int, block: int) -> np.random.Generator:
    key = (int(seed) & _MASK64) | ((int(substream) & _MASK64) << 64)
    return np.random.Generator(np.random.Philox(key=key, counter=int(block) << 192))


def per_path(
    seed: int,
    substream: int,
    n_paths: int,
    draw: Callable[[np.random.Generator, int], np.ndarray],
    workers: int = 1,
) -> np.ndarray:
    """Fill an array of ``n_paths`` rows block by block.

    ``draw(gen, rows)`` returns an array whose first axis has length
    ``rows``. Every block is drawn at full size and the last one truncated,
    so row ``i`` never depends on ``n_paths``.
    """
    n_blocks = -(-n_paths // BLOCK_SIZE)

    def one(b):
        rows = min(BLOCK_SIZE, n_paths - b * BLOCK_SIZE)
        return draw(block_generator(seed, substream, b), BLOCK_SIZE)[:rows]

    if workers > 1 and n_blocks > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(one, range(n_blocks)))
    else:
        parts = [one(b) for b in range(n_blocks)]
    return np.concatenate(parts, axis=0)


def normals(seed: int, substream: int, n_paths: int, shape: tuple[int, ...] = (), workers: int = 1) -> np.ndarray:
    """Standard normals of shape ``(n_paths, *shape)``."""
    return per_path(seed, substream, n_paths, lambda g, rows: g.standard_normal((rows, *shape)), workers)

"""
Counter-based random streams.

Every (seed, replica, edge index) triple owns an independent Philox stream:
the seed and replica form the 128-bit key, the edge index occupies the top
word of the 256-bit counter. The k-th normal drawn from a stream drives
step k of that edge, so results do not depend on execution order, thread
count or chunking.
"""

from typing import List, Sequence

import numpy as np

_WORD = 1 << 64


def edge_stream(seed: int, replica: int, edge_index: int) -> np.random.Generator:
    """
    Generator for one edge of one Monte Carlo replica.

    Args:
        seed: Master seed (64-bit).
        replica: Replica number (64-bit).
        edge_index: Edge position in the graph config.

    Returns:
        np.random.Generator: Philox-backed generator.
    """
    if not 0 <= seed < _WORD or not 0 <= replica < _WORD:
        raise ValueError("seed and replica must fit in 64 bits")
    key = seed + (replica << 64)
    counter = np.array([0, 0, 0, edge_index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


class EdgeStreams:
    """Stream factory bound to one (seed, replica) pair."""

    def __init__(self, seed: int, replica: int = 0):
        self.seed = seed
        self.replica = replica

    def for_edge(self, edge_index: int) -> np.random.Generator:
        return edge_stream(self.seed, self.replica, edge_index)


def batch_normals(streams: Sequence[np.random.Generator], n_steps: int) -> np.ndarray:
    """Standard normals of shape (len(streams), n_steps), row r drawn from streams[r]."""
    rows: List[np.ndarray] = [s.standard_normal(n_steps) for s in streams]
    return np.stack(rows) if rows else np.empty((0, n_steps))

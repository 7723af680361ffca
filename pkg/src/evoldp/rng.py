"""Per-replica random streams derived from (master seed, replica index)."""

from __future__ import annotations

import numpy as np


def replica_rng(seed: int, replica: int) -> np.random.Generator:
    """Independent generator for one replica; does not depend on how many replicas run."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(replica,))))


class UniformBlocks:
    """Serves ``(R, width)`` uniforms per step, each row drawn from its replica's own stream.

    Draws are buffered in blocks so the per-step cost stays vectorized while a
    replica's sequence is independent of the batch it runs in.
    """

    def __init__(self, seed: int, replicas, width: int = 2, block: int = 1024):
        self.gens = [replica_rng(seed, int(r)) for r in replicas]
        self.width = width
        self.block = block
        self._buf = None
        self._pos = block

    def next(self) -> np.ndarray:
        if self._pos == self.block:
            self._buf = np.stack([g.random((self.block, self.width)) for g in self.gens], axis=1)
            self._pos = 0
        out = self._buf[self._pos]
        self._pos += 1
        return out

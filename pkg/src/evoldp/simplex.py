"""Population states on the simplex and on the N-agent grid."""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

SUM_TOL = 1e-12


def as_simplex_point(x, tol: float = SUM_TOL) -> np.ndarray:
    """Validate ``x`` as a population state and return it as a float array.

    Raises ``ValueError`` when entries are negative, the length is below two,
    or the coordinates do not sum to one within ``tol``.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise ValueError(f"a population state needs n >= 2 coordinates, got shape {x.shape}")
    if not np.all(np.isfinite(x)) or np.any(x < 0):
        raise ValueError(f"population shares must be finite and nonnegative: {x}")
    if abs(x.sum() - 1.0) > tol:
        raise ValueError(f"population shares must sum to 1 (got {x.sum():.17g})")
    return x


def support(x, tol: float = 0.0) -> np.ndarray:
    """Indices of actions in use at ``x``."""
    return np.flatnonzero(np.asarray(x) > tol)


@dataclass(frozen=True)
class GridState:
    """A state of the N-agent population: integer action counts summing to N."""

    counts: tuple[int, ...]
    pop_size: int

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        object.__setattr__(self, "counts", counts)
        if len(counts) < 2:
            raise ValueError("a grid state needs at least two actions")
        if any(c < 0 for c in counts):
            raise ValueError(f"counts must be nonnegative: {counts}")
        if sum(counts) != self.pop_size:
            raise ValueError(f"counts {counts} do not sum to N={self.pop_size}")

    @property
    def n(self) -> int:
        return len(self.counts)

    @property
    def x(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=float) / self.pop_size

    @classmethod
    def from_shares(cls, x, pop_size: int) -> "GridState":
        """Round shares to the nearest grid state (largest-remainder rounding)."""
        x = as_simplex_point(x, tol=1e-9)
        scaled = x * pop_size
        counts = np.floor(scaled).astype(int)
        short = pop_size - counts.sum()
        order = np.argsort(-(scaled - counts), kind="stable")
        counts[order[:short]] += 1
        return cls(tuple(counts), pop_size)

    @classmethod
    def pure(cls, i: int, n: int, pop_size: int) -> "GridState":
        counts = [0] * n
        counts[i] = pop_size
        return cls(tuple(counts), pop_size)


def grid_size(n: int, N: int) -> int:
    """Number of points of the grid X^N for n actions."""
    return comb(N + n - 1, n - 1)


def enumerate_grid(n: int, N: int) -> np.ndarray:
    """All count vectors of the N-agent grid, in lexicographic order.

    Returns an integer array of shape ``(grid_size(n, N), n)``. Row order is the
    stable indexing used by every state-space routine in the package.
    """
    if n == 1:
        return np.array([[N]], dtype=np.int64)
    blocks = []
    for first in range(N + 1):
        rest = enumerate_grid(n - 1, N - first)
        blocks.append(np.column_stack([np.full(len(rest), first, dtype=np.int64), rest]))
    return np.vstack(blocks)


def grid_index(n: int, N: int):
    """Map from count tuples to row indices of :func:`enumerate_grid`."""
    states = enumerate_grid(n, N)
    return states, {tuple(row): k for k, row in enumerate(states.tolist())}


def simplex_mesh(n: int, resolution: int) -> np.ndarray:
    """Barycentric mesh of X with spacing ``1/resolution`` (shares, not counts)."""
    return enumerate_grid(n, resolution) / float(resolution)

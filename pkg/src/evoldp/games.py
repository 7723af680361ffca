"""Population games: matching in normal form games, congestion games, direct payoffs.

Every game exposes the limiting payoff ``F(x)`` and the finite-population payoff
vector considered by a revising agent, under simple or clever evaluation.
Payoff routines accept states with arbitrary leading batch axes, ``(..., n)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .simplex import GridState, as_simplex_point

SIMPLE = "simple"
CLEVER = "clever"


class GameSpec:
    """Base class for population games with n actions."""

    variant: str = ""
    n: int

    def payoff(self, x) -> np.ndarray:
        """Limiting payoff vector F(x); ``x`` may carry leading batch axes."""
        raise NotImplementedError

    def payoff_N(self, x, N: int) -> np.ndarray:
        """Finite-population payoffs F^N(x). Defaults to the limit game."""
        return self.payoff(x)

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class MatchingGame(GameSpec):
    """Random matching in a symmetric two-player game with payoff matrix ``A``.

    With ``self_match_excluded`` each agent meets all *other* agents, so
    ``F^N_i(x) = (A(Nx - e_i))_i / (N-1)``.
    """

    A: np.ndarray
    self_match_excluded: bool = True
    variant: str = field(default="matching", init=False)

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 2:
            raise ValueError(f"payoff matrix must be square with n >= 2, got {A.shape}")
        if not np.all(np.isfinite(A)):
            raise ValueError("payoff matrix must be finite")
        object.__setattr__(self, "A", A)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def payoff(self, x):
        return np.asarray(x, dtype=float) @ self.A.T

    def payoff_N(self, x, N):
        Ax = self.payoff(x)
        if not self.self_match_excluded:
            return Ax
        # (A(Nx - e_j))_j / (N-1) = (N (Ax)_j - A_jj) / (N-1)
        return (N * Ax - np.diag(self.A)) / (N - 1)

    def to_dict(self):
        return {"variant": "matching", "A": self.A.tolist(),
                "self_match_excluded": self.self_match_excluded}


@dataclass(frozen=True, eq=False)
class CongestionGame(GameSpec):
    """Congestion game with polynomial facility costs.

    ``facilities[k]`` lists the coefficients of the cost ``l_k(u)`` in ascending
    powers of the utilization u; ``usage[i, k] = 1`` when action i uses facility k.
    Payoffs are ``F_i(x) = -sum_{k in path i} l_k(u_k(x))`` with ``u = usage' x``.
    Finite populations use the same costs (``l^N = l``).
    """

    facilities: tuple
    usage: np.ndarray
    variant: str = field(default="congestion", init=False)

    def __post_init__(self):
        facs = tuple(tuple(float(c) for c in np.atleast_1d(coef)) for coef in self.facilities)
        usage = np.asarray(self.usage, dtype=float)
        if usage.ndim != 2 or usage.shape[1] != len(facs):
            raise ValueError(f"usage must be n x {len(facs)}, got {usage.shape}")
        if not np.all((usage == 0) | (usage == 1)):
            raise ValueError("usage incidence entries must be 0 or 1")
        if usage.shape[0] < 2:
            raise ValueError("a congestion game needs at least two actions")
        object.__setattr__(self, "facilities", facs)
        object.__setattr__(self, "usage", usage)
        degree = max(len(c) for c in facs)
        coef = np.zeros((len(facs), degree))
        for k, c in enumerate(facs):
            coef[k, : len(c)] = c
        object.__setattr__(self, "_coef", coef)

    @property
    def n(self) -> int:
        return self.usage.shape[0]

    def utilization(self, x):
        return np.asarray(x, dtype=float) @ self.usage

    def costs(self, u):
        """Facility costs l_k(u_k), Horner evaluation over the last axis."""
        out = np.zeros_like(u)
        for p in range(self._coef.shape[1] - 1, -1, -1):
            out = out * u + self._coef[:, p]
        return out

    def cost_integrals(self, u):
        """Antiderivatives int_0^{u_k} l_k(s) ds."""
        out = np.zeros_like(u)
        for p in range(self._coef.shape[1] - 1, -1, -1):
            out = out * u + self._coef[:, p] / (p + 1)
        return out * u

    def payoff(self, x):
        return -(self.costs(self.utilization(x)) @ self.usage.T)

    def potential(self, x):
        """Rosenthal potential f(x) = -sum_k int_0^{u_k(x)} l_k; its gradient is F."""
        return -self.cost_integrals(self.utilization(x)).sum(axis=-1)

    def to_dict(self):
        return {"variant": "congestion", "facilities": [list(c) for c in self.facilities],
                "usage": self.usage.astype(int).tolist()}


@dataclass(frozen=True, eq=False)
class DirectGame(GameSpec):
    """Game given by a payoff function ``F: X -> R^n`` (used for every N)."""

    F: Callable
    n_actions: int
    name: str = "direct"
    variant: str = field(default="direct", init=False)

    @property
    def n(self) -> int:
        return self.n_actions

    def payoff(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return np.asarray(self.F(x), dtype=float)
        flat = x.reshape(-1, x.shape[-1])
        return np.array([self.F(row) for row in flat], dtype=float).reshape(x.shape)

    def to_dict(self):
        raise TypeError("direct games wrap a Python callable and cannot be serialized")


def three_link_congestion_game() -> CongestionGame:
    """Three parallel links with delays 1 + 8u, 2 + 4u and 4."""
    return CongestionGame(facilities=([1, 8], [2, 4], [4]), usage=np.eye(3))


def game_from_dict(doc: dict) -> GameSpec:
    variant = doc.get("variant")
    if variant == "matching":
        return MatchingGame(np.asarray(doc["A"], dtype=float), bool(doc.get("self_match_excluded", True)))
    if variant == "congestion":
        return CongestionGame(tuple(doc["facilities"]), np.asarray(doc["usage"], dtype=float))
    raise ValueError(f"unknown or non-serializable game variant: {variant!r}")


def game_to_json(game: GameSpec) -> str:
    return json.dumps(game.to_dict())


def game_from_json(text: str) -> GameSpec:
    return game_from_dict(json.loads(text))


def payoff_limit(game: GameSpec, x) -> np.ndarray:
    """F(x) for a validated state ``x``."""
    return game.payoff(as_simplex_point(x))


def clever_states(x, N: int, actor) -> np.ndarray:
    """States x + (e_j - e_i)/N for all j, for actor i. Shape ``(..., n, n)``.

    ``x`` has shape ``(..., n)`` and ``actor`` broadcasts against ``x[..., 0]``.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    actor = np.asarray(actor)
    moved = np.broadcast_to(x[..., None, :], x.shape[:-1] + (n, n)).copy()
    moved += np.eye(n) / N
    onehot = np.eye(n)[actor]
    moved -= onehot[..., None, :] / N
    return moved


def finite_payoff_vectors(game: GameSpec, x, N: int, actor, mode: str) -> np.ndarray:
    """Payoff vectors F^N_{i->.}(x) for actors ``actor`` at states ``x`` (batched)."""
    if mode == SIMPLE:
        return game.payoff_N(x, N)
    if mode == CLEVER:
        moved = clever_states(x, N, actor)
        vals = game.payoff_N(moved, N)
        return np.diagonal(vals, axis1=-2, axis2=-1).copy()
    raise ValueError(f"unknown payoff mode {mode!r}")


def payoff_finite(game: GameSpec, state: GridState, actor: int, mode: str = SIMPLE) -> np.ndarray:
    """Payoff vector considered by a revising action-``actor`` agent at a grid state.

    Simple evaluation returns ``F^N(x)``; clever evaluation returns
    ``F^N_j(x + (e_j - e_i)/N)`` for each candidate action j.
    """
    if state.n != game.n:
        raise ValueError(f"state has {state.n} actions, game has {game.n}")
    if mode == CLEVER and state.counts[actor] < 1:
        raise ValueError(f"clever evaluation needs an action-{actor} agent; count is 0")
    return finite_payoff_vectors(game, state.x, state.pop_size, actor, mode)


def lipschitz_estimate(game: GameSpec, samples: int = 1000, seed: int = 0) -> float:
    """Largest sampled difference quotient |F(x) - F(y)|_1 / |x - y|_1.

    A heuristic over ``samples`` random pairs; it bounds nothing.
    """
    rng = np.random.default_rng(seed)
    x = rng.dirichlet(np.ones(game.n), size=samples)
    y = rng.dirichlet(np.ones(game.n), size=samples)
    num = np.abs(game.payoff(x) - game.payoff(y)).sum(axis=1)
    den = np.abs(x - y).sum(axis=1)
    if not np.all(np.isfinite(num)):
        raise ValueError("payoff function returned non-finite values")
    return float(np.max(num / np.maximum(den, 1e-300)))

"""Revision protocols and the switch-probability matrix sigma^N(x)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .games import CLEVER, SIMPLE, GameSpec, finite_payoff_vectors
from .simplex import GridState, as_simplex_point, simplex_mesh

LIMIT = "limit"
ROW_TOL = 1e-12


class ConfigurationError(ValueError):
    """A protocol was configured or called with inputs it cannot accept."""


def logit_choice(payoffs, eta: float) -> np.ndarray:
    """Logit choice probabilities ``exp(pi_j/eta) / sum_k exp(pi_k/eta)`` over the last axis."""
    a = np.asarray(payoffs, dtype=float) / eta
    a = a - a.max(axis=-1, keepdims=True)
    e = np.exp(a)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class Logit:
    eta: float

    def __post_init__(self):
        if not self.eta > 0:
            raise ConfigurationError(f"logit noise level must be positive, got {self.eta}")

    @property
    def row_independent(self) -> bool:
        return True

    def choice(self, payoffs, actor, x, N=None):
        return logit_choice(payoffs, self.eta)

    def to_dict(self):
        return {"variant": "logit", "eta": self.eta}


@dataclass(frozen=True)
class PairwiseLogit:
    """Candidate drawn uniformly among the other actions, then a binary logit
    comparison between the current action and the candidate."""

    eta: float

    def __post_init__(self):
        if not self.eta > 0:
            raise ConfigurationError(f"pairwise logit noise level must be positive, got {self.eta}")

    @property
    def row_independent(self) -> bool:
        return False

    def choice(self, payoffs, actor, x, N=None):
        pi = np.asarray(payoffs, dtype=float) / self.eta
        n = pi.shape[-1]
        actor = np.asarray(actor)
        own = np.take_along_axis(pi, actor[..., None], axis=-1)
        # P(candidate j beats own action i) = 1 / (1 + exp(pi_i - pi_j)), overflow-safe
        win = 0.5 * (1.0 + np.tanh(0.5 * (pi - own)))
        probs = win / (n - 1)
        onehot = np.eye(n, dtype=bool)[actor]
        stay = (1.0 - win) / (n - 1)
        stay = np.where(onehot, 0.0, stay).sum(axis=-1)
        return np.where(onehot, stay[..., None], probs)

    def to_dict(self):
        return {"variant": "pairwise_logit", "eta": self.eta}


@dataclass(frozen=True)
class ImitationMutation:
    """Imitation of a randomly met opponent with probability proportional to her
    (normalized) payoff, plus uniform mutations at rate ``epsilon``.

    Payoffs are mapped through ``scale * pi + shift`` and must land in [0, 1].
    Pass ``N=math.inf`` for the large-population limit of the protocol.
    """

    epsilon: float
    scale: float = 1.0
    shift: float = 0.0

    def __post_init__(self):
        if not 0 < self.epsilon <= 1:
            raise ConfigurationError(f"mutation rate must lie in (0, 1], got {self.epsilon}")

    @property
    def row_independent(self) -> bool:
        return False

    def choice(self, payoffs, actor, x, N=None):
        if N is None:
            raise ConfigurationError("imitation protocol needs the population size N")
        pi = self.scale * np.asarray(payoffs, dtype=float) + self.shift
        if np.any(pi < -1e-12) or np.any(pi > 1 + 1e-12):
            raise ConfigurationError("normalized payoffs must lie in [0, 1] for imitation")
        pi = np.clip(pi, 0.0, 1.0)
        x = np.asarray(x, dtype=float)
        n = x.shape[-1]
        actor = np.asarray(actor)
        eps = self.epsilon
        if math.isinf(N):
            others, same = x, np.take_along_axis(x, actor[..., None], axis=-1)[..., 0]
        else:
            # opponents are the N-1 other agents
            others = N / (N - 1) * x
            xi = np.take_along_axis(x, actor[..., None], axis=-1)[..., 0]
            same = np.maximum(N * xi - 1, 0.0) / (N - 1)
        onehot = np.eye(n, dtype=bool)[actor]
        switch = (1 - eps) * others * pi + eps / n
        stay_terms = np.where(onehot, 0.0, others * (1 - pi)).sum(axis=-1)
        stay = (1 - eps) * (same + stay_terms) + eps / n
        return np.where(onehot, stay[..., None], switch)

    def to_dict(self):
        return {"variant": "imitation_mutation", "epsilon": self.epsilon,
                "scale": self.scale, "shift": self.shift}


ProtocolSpec = Logit | PairwiseLogit | ImitationMutation


def protocol_from_dict(doc: dict) -> ProtocolSpec:
    variant = doc.get("variant")
    if variant == "logit":
        return Logit(float(doc["eta"]))
    if variant == "pairwise_logit":
        return PairwiseLogit(float(doc["eta"]))
    if variant == "imitation_mutation":
        return ImitationMutation(float(doc["epsilon"]), float(doc.get("scale", 1.0)),
                                 float(doc.get("shift", 0.0)))
    raise ConfigurationError(f"unknown protocol variant {variant!r}")


def parse_protocol(spec: str) -> ProtocolSpec:
    """Parse CLI shorthand such as ``logit:0.25``, ``pairwise_logit:0.1``,
    ``imitation_mutation:0.05`` or ``imitation_mutation:0.05:scale:shift``."""
    name, _, rest = spec.partition(":")
    args = [float(a) for a in rest.split(":") if a]
    if name == "logit" and len(args) == 1:
        return Logit(args[0])
    if name in ("pairwise_logit", "pairwise-logit") and len(args) == 1:
        return PairwiseLogit(args[0])
    if name in ("imitation_mutation", "imitation") and len(args) in (1, 3):
        return ImitationMutation(*args)
    raise ConfigurationError(f"cannot parse protocol spec {spec!r}")


def choice_distribution(protocol: ProtocolSpec, payoffs, current_action: int, state, pop_size=None) -> np.ndarray:
    """Probabilities with which a revising ``current_action`` player picks each action."""
    payoffs = np.asarray(payoffs, dtype=float)
    if not np.all(np.isfinite(payoffs)):
        raise ConfigurationError("payoffs must be finite")
    x = as_simplex_point(state, tol=1e-9)
    return protocol.choice(payoffs, np.asarray(current_action), x, pop_size)


@dataclass(frozen=True)
class SwitchMatrix:
    """Row-stochastic matrix of switch probabilities; ``lower_bound`` is its smallest entry."""

    entries: np.ndarray
    lower_bound: float

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        if e.ndim != 2 or e.shape[0] != e.shape[1]:
            raise ValueError(f"switch matrix must be square, got {e.shape}")
        if np.any(e < 0):
            raise ValueError("switch probabilities must be nonnegative")
        if np.max(np.abs(e.sum(axis=1) - 1)) > ROW_TOL:
            raise ValueError(f"switch matrix rows must sum to 1: {e.sum(axis=1)}")
        object.__setattr__(self, "entries", e)

    @classmethod
    def from_entries(cls, entries) -> "SwitchMatrix":
        e = np.asarray(entries, dtype=float)
        return cls(e, float(e.min()))

    @property
    def n(self) -> int:
        return self.entries.shape[0]


def switch_rows(game: GameSpec, protocol: ProtocolSpec, x, N, actors, mode: str) -> np.ndarray:
    """Rows sigma_i.(x) for a batch of states ``x`` (..., n) and actors (...).

    ``mode`` is ``simple`` or ``clever`` (finite population N) or ``limit``.
    """
    if mode == LIMIT:
        payoffs = game.payoff(x)
        pop = math.inf
    else:
        payoffs = finite_payoff_vectors(game, x, N, actors, mode)
        pop = N
    return protocol.choice(payoffs, actors, x, pop)


def switch_matrix_array(game: GameSpec, protocol: ProtocolSpec, x, N=None, mode: str = LIMIT) -> np.ndarray:
    """All rows of sigma at a batch of states; returns shape ``(..., n, n)``."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    if mode != LIMIT and N is None:
        raise ConfigurationError(f"mode {mode!r} needs a population size")
    if mode == LIMIT or (mode == SIMPLE and protocol.row_independent):
        payoffs = game.payoff(x) if mode == LIMIT else game.payoff_N(x, N)
        if protocol.row_independent:
            row = protocol.choice(payoffs, np.zeros(x.shape[:-1], dtype=int), x, math.inf)
            return np.broadcast_to(row[..., None, :], x.shape[:-1] + (n, n)).copy()
    xb = np.broadcast_to(x[..., None, :], x.shape[:-1] + (n, n))
    actors = np.broadcast_to(np.arange(n), x.shape[:-1] + (n,))
    return switch_rows(game, protocol, xb, N, actors, mode)


def switch_matrix(game: GameSpec, protocol: ProtocolSpec, state, mode: str = LIMIT) -> SwitchMatrix:
    """sigma^N(x) (``simple``/``clever`` at a GridState) or sigma(x) (``limit``).

    In clever mode, rows of actions with zero count use simple evaluation: they
    carry no probability mass in the transition law.
    """
    if isinstance(state, GridState):
        x, N = state.x, state.pop_size
        if state.n != game.n:
            raise ValueError("state and game dimensions differ")
    else:
        x, N = as_simplex_point(state, tol=1e-9), None
        if x.size != game.n:
            raise ValueError("state and game dimensions differ")
        if mode != LIMIT:
            raise ConfigurationError("finite-population modes need a GridState")
    if mode == CLEVER:
        counts = np.asarray(state.counts)
        sig = switch_matrix_array(game, protocol, x, N, CLEVER)
        if np.any(counts == 0):
            simple = switch_matrix_array(game, protocol, x, N, SIMPLE)
            sig[counts == 0] = simple[counts == 0]
    else:
        sig = switch_matrix_array(game, protocol, x, N, mode)
    return SwitchMatrix.from_entries(sig)


def switch_floor(game: GameSpec, protocol: ProtocolSpec, resolution: int = 200) -> float:
    """Smallest limiting switch probability over a simplex mesh of spacing 1/resolution.

    This is the reported value of the lower bound varsigma of the switch probabilities.
    """
    mesh = simplex_mesh(game.n, resolution)
    lo = math.inf
    for chunk in np.array_split(mesh, max(1, len(mesh) // 20000)):
        lo = min(lo, float(switch_matrix_array(game, protocol, chunk).min()))
    return lo


def logit_floor_bound(payoff_range: float, eta: float, n: int) -> float:
    """Analytic lower bound exp(-range/eta)/n on logit choice probabilities."""
    return math.exp(-payoff_range / eta) / n

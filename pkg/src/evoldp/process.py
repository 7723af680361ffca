"""The finite-population Markov chain X^N: transition law, simulation,
stationary distributions and exit-time Monte Carlo."""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import spsolve

from .games import SIMPLE, GameSpec
from .protocols import SwitchMatrix, switch_matrix_array, switch_rows
from .rng import UniformBlocks
from .simplex import GridState, as_simplex_point, enumerate_grid, grid_size

MASS_TOL = 1e-12


def increments(n: int) -> np.ndarray:
    """Raw increments in canonical order: the null move, then e_j - e_i for i != j (row-major)."""
    rows = [np.zeros(n)]
    for i in range(n):
        for j in range(n):
            if i != j:
                z = np.zeros(n)
                z[j], z[i] = 1.0, -1.0
                rows.append(z)
    return np.array(rows)


def offdiag_pairs(n: int) -> tuple[np.ndarray, np.ndarray]:
    """(i, j) index arrays matching atoms 1.. of :func:`increments`."""
    i, j = np.nonzero(~np.eye(n, dtype=bool))
    return i, j


@dataclass(frozen=True)
class IncrementLaw:
    """Distribution over raw increments: ``off[i, j]`` is the mass on e_j - e_i
    (diagonal unused), ``null`` the mass on the zero increment."""

    off: np.ndarray
    null: float

    def __post_init__(self):
        off = np.array(self.off, dtype=float)
        np.fill_diagonal(off, 0.0)
        if np.any(off < 0) or self.null < 0:
            raise ValueError("increment probabilities must be nonnegative")
        total = off.sum() + self.null
        if abs(total - 1) > MASS_TOL:
            raise ValueError(f"increment law has total mass {total!r}")
        object.__setattr__(self, "off", off)
        object.__setattr__(self, "null", float(self.null))

    @property
    def n(self) -> int:
        return self.off.shape[0]

    def vector(self) -> np.ndarray:
        """Masses in the order of :func:`increments`."""
        i, j = offdiag_pairs(self.n)
        return np.concatenate([[self.null], self.off[i, j]])

    @classmethod
    def from_vector(cls, n: int, p) -> "IncrementLaw":
        p = np.asarray(p, dtype=float)
        off = np.zeros((n, n))
        i, j = offdiag_pairs(n)
        off[i, j] = p[1:]
        return cls(off, p[0])

    def mean(self) -> np.ndarray:
        return self.off.sum(axis=0) - self.off.sum(axis=1)

    def respects_support(self, x) -> bool:
        """True when no mass sits on e_j - e_i with x_i = 0."""
        unused = np.asarray(x) == 0
        return bool(np.all(self.off[unused] == 0))


def increment_weights(x, sigma) -> np.ndarray:
    """Batched transition law: x (..., n), sigma (..., n, n) -> masses (..., m)."""
    x = np.asarray(x, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    n = x.shape[-1]
    flows = x[..., :, None] * sigma
    i, j = offdiag_pairs(n)
    null = np.einsum("...ii->...", flows)
    return np.concatenate([null[..., None], flows[..., i, j]], axis=-1)


def increment_law(x, sigma) -> IncrementLaw:
    """nu(.|x): mass x_i sigma_ij on e_j - e_i and sum_i x_i sigma_ii on the null increment."""
    if isinstance(x, GridState):
        x = x.x
    x = as_simplex_point(x, tol=1e-9)
    s = sigma.entries if isinstance(sigma, SwitchMatrix) else np.asarray(sigma, dtype=float)
    if np.max(np.abs(s.sum(axis=1) - 1)) > MASS_TOL:
        raise ValueError("switch matrix rows must sum to 1")
    flows = x[:, None] * s
    return IncrementLaw(flows, float(np.trace(flows)))


@dataclass
class SampledPath:
    """Time-stamped trajectory through X, read with piecewise-affine interpolation."""

    times: np.ndarray
    states: np.ndarray
    step: float
    interpolation: str = "affine"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.times.ndim != 1 or self.states.shape[0] != self.times.size:
            raise ValueError("times and states disagree in length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("path times must be strictly increasing")

    def __len__(self):
        return self.times.size

    def at(self, t) -> np.ndarray:
        """Interpolated state(s) at time(s) t."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.column_stack([np.interp(t, self.times, self.states[:, k]) for k in range(self.states.shape[1])])
        return out[0] if out.shape[0] == 1 else out

    def check(self, tol: float = 1e-9) -> None:
        """Assert states are on X and l1 speed never exceeds 2."""
        if np.any(self.states < -tol) or np.max(np.abs(self.states.sum(axis=1) - 1)) > tol:
            raise ValueError("path leaves the simplex")
        jumps = np.abs(np.diff(self.states, axis=0)).sum(axis=1)
        if np.any(jumps > 2 * np.diff(self.times) * (1 + tol) + tol):
            raise ValueError("path moves faster than l1 speed 2")

    def to_csv(self) -> str:
        n = self.states.shape[1]
        lines = ["time," + ",".join(f"x_{k + 1}" for k in range(n))]
        for t, s in zip(self.times, self.states):
            lines.append(f"{t:.12g}," + ",".join(f"{v:.17g}" for v in s))
        return "\n".join(lines) + "\n"


# -- simulation -----------------------------------------------------------------

class BatchChain:
    """R independent copies of X^N advanced together, one revision per step.

    Each step a revising agent is drawn uniformly (so an action-i agent with
    probability x_i) and picks its next action from sigma^N_i.(x). Replica r
    consumes its own uniform stream, so its path does not depend on the batch.
    """

    def __init__(self, game: GameSpec, protocol, counts, N: int, seed: int,
                 replicas=None, mode: str = SIMPLE, block: int = 1024):
        self.game, self.protocol, self.N, self.mode = game, protocol, int(N), mode
        self.counts = np.array(counts, dtype=np.int64)
        if self.counts.ndim == 1:
            self.counts = self.counts[None, :]
        if np.any(self.counts.sum(axis=1) != self.N) or np.any(self.counts < 0):
            raise ValueError("initial counts must be nonnegative and sum to N")
        R = self.counts.shape[0]
        replicas = range(R) if replicas is None else replicas
        self.uniforms = UniformBlocks(seed, replicas, width=2, block=block)

    @property
    def x(self) -> np.ndarray:
        return self.counts / self.N

    def step(self, active=None) -> np.ndarray:
        """Advance (active) replicas by one period; returns the increments drawn."""
        u = self.uniforms.next()
        idx = np.arange(self.counts.shape[0]) if active is None else np.flatnonzero(active)
        z = np.zeros(self.counts.shape, dtype=np.int64)
        if idx.size == 0:
            return z
        counts = self.counts[idx]
        agent = np.floor(u[idx, 0] * self.N)
        actor = (np.cumsum(counts, axis=1) <= agent[:, None]).sum(axis=1)
        actor = np.minimum(actor, counts.shape[1] - 1)
        rows = switch_rows(self.game, self.protocol, counts / self.N, self.N, actor, self.mode)
        cdf = np.cumsum(rows, axis=1)
        choice = (cdf < u[idx, 1:2] * cdf[:, -1:]).sum(axis=1)
        choice = np.minimum(choice, counts.shape[1] - 1)
        moved = choice != actor
        r = idx[moved]
        z[r, actor[moved]] -= 1
        z[r, choice[moved]] += 1
        self.counts += z
        return z


def simulate_path(game: GameSpec, protocol, x0: GridState, horizon: float, seed: int,
                  mode: str = SIMPLE, replica: int = 0) -> SampledPath:
    """Simulate ceil(N T) periods of X^N from ``x0``; each period lasts 1/N clock units."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    N = x0.pop_size
    steps = math.ceil(N * horizon - 1e-9)
    chain = BatchChain(game, protocol, x0.counts, N, seed, replicas=[replica], mode=mode)
    states = np.empty((steps + 1, x0.n))
    states[0] = chain.x[0]
    for k in range(steps):
        chain.step()
        states[k + 1] = chain.x[0]
    times = np.arange(steps + 1) / N
    return SampledPath(times, states, 1.0 / N, meta={"N": N, "seed": seed, "replica": replica, "mode": mode})


# -- state space ------------------------------------------------------------------

def grid_rank(counts, N: int) -> np.ndarray:
    """Lexicographic index of count vectors (..., n) within :func:`enumerate_grid`."""
    counts = np.asarray(counts, dtype=np.int64)
    n = counts.shape[-1]
    # pref[d][k] = number of compositions of s < k into d parts, d = 1..n-1
    idx = np.zeros(counts.shape[:-1], dtype=np.int64)
    remaining = np.full(counts.shape[:-1], N, dtype=np.int64)
    for p in range(n - 1):
        d = n - p - 1
        comp = np.array([math.comb(s + d - 1, d - 1) for s in range(N + 1)], dtype=np.int64)
        pref = np.concatenate([[0], np.cumsum(comp)])
        c = counts[..., p]
        idx += pref[remaining + 1] - pref[remaining - c + 1]
        remaining = remaining - c
    return idx


@dataclass
class ChainTable:
    """Transition structure of X^N on the whole grid (feasible for small grids)."""

    states: np.ndarray     # (S, n) counts, lexicographic
    sigma: np.ndarray      # (S, n, n) switch probabilities
    weights: np.ndarray    # (S, m) increment masses
    targets: np.ndarray    # (S, m) index of x + z/N, -1 when unreachable
    N: int

    @property
    def size(self) -> int:
        return self.states.shape[0]

    def matrix(self) -> sp.csr_matrix:
        S, m = self.weights.shape
        rows = np.repeat(np.arange(S), m)
        cols = self.targets.ravel()
        vals = self.weights.ravel()
        keep = (cols >= 0) & (vals > 0)
        P = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(S, S))
        return P.tocsr()


def chain_table(game: GameSpec, protocol, N: int, mode: str = SIMPLE, cap: int = 200_000) -> ChainTable:
    n = game.n
    S = grid_size(n, N)
    if S > cap:
        raise ValueError(f"grid has {S} states, above the cap of {cap}")
    states = enumerate_grid(n, N)
    x = states / N
    sigma = switch_matrix_array(game, protocol, x, N, mode)
    if mode != SIMPLE and mode != "limit":
        simple = switch_matrix_array(game, protocol, x, N, SIMPLE)
        empty = states == 0
        sigma[empty] = simple[empty]
    weights = increment_weights(x, sigma)
    Z = increments(n).astype(np.int64)
    nxt = states[:, None, :] + Z[None, :, :]
    ok = np.all(nxt >= 0, axis=-1)
    targets = np.where(ok, grid_rank(np.maximum(nxt, 0), N), -1)
    weights = np.where(ok, weights, 0.0)
    return ChainTable(states, sigma, weights, targets, N)


class ChainError(RuntimeError):
    """The chain is reducible or periodic, so it has no unique limiting law."""


@dataclass
class StationaryResult:
    states: np.ndarray          # (S, n) counts
    mu: np.ndarray              # (S,) masses
    log_mu: np.ndarray          # (S,) log masses (accurate far into the tails)
    residual: float             # |mu P - mu|_1
    method: str
    N: int

    def to_csv(self) -> str:
        n = self.states.shape[1]
        lines = [",".join(f"c_{k + 1}" for k in range(n)) + ",mass"]
        for c, m in zip(self.states, self.mu):
            lines.append(",".join(str(int(v)) for v in c) + f",{m:.17g}")
        return "\n".join(lines) + "\n"


def _check_ergodic(P: sp.csr_matrix) -> None:
    ncomp, _ = connected_components(P, directed=True, connection="strong")
    if ncomp != 1:
        raise ChainError(f"chain is reducible ({ncomp} communicating classes)")
    if not np.any(P.diagonal() > 0):
        # irreducible with no holding: check the period through BFS levels
        S = P.shape[0]
        level = np.full(S, -1)
        level[0] = 0
        frontier = [0]
        g = 0
        Pc = P.tocsr()
        while frontier:
            nxt = []
            for s in frontier:
                for t in Pc.indices[Pc.indptr[s]:Pc.indptr[s + 1]]:
                    if level[t] < 0:
                        level[t] = level[s] + 1
                        nxt.append(t)
                    else:
                        g = math.gcd(g, level[s] + 1 - level[t])
            frontier = nxt
        if g != 1:
            raise ChainError(f"chain is periodic with period {g}")


def gth_solve(P: np.ndarray) -> np.ndarray:
    """Stationary law by Grassmann-Taksar-Heyman state reduction.

    Subtraction-free, so small masses keep full relative accuracy.
    """
    A = np.array(P, dtype=float)
    S = A.shape[0]
    for k in range(S - 1, 0, -1):
        s = A[k, :k].sum()
        if s <= 0:
            raise ChainError("state reduction hit an absorbing block; chain is reducible")
        A[:k, k] /= s
        A[:k, :k] += np.outer(A[:k, k], A[k, :k])
    pi = np.zeros(S)
    pi[0] = 1.0
    for k in range(1, S):
        pi[k] = pi[:k] @ A[:k, k]
        if pi[k] > 1e200:
            # rescale so later states do not overflow; the smallest masses may underflow to 0
            pi[: k + 1] /= pi[k]
    return pi / pi.sum()


def _birth_death_log(table: ChainTable) -> np.ndarray:
    """Log stationary masses of a two-action chain from detailed balance."""
    states = table.states
    # lexicographic order puts c_1 = 0 first, so the index equals c_1
    S = table.size
    Z = increments(2)
    up = np.flatnonzero((Z[:, 0] == 1))[0]     # e_1 - e_2
    down = np.flatnonzero((Z[:, 0] == -1))[0]  # e_2 - e_1
    p_up = table.weights[:, up]
    p_down = table.weights[:, down]
    if np.any(p_up[:-1] <= 0) or np.any(p_down[1:] <= 0):
        raise ChainError("birth-death chain has a blocked transition")
    steps = np.log(p_up[:-1]) - np.log(p_down[1:])
    log_mu = np.concatenate([[0.0], np.cumsum(steps)])
    assert np.array_equal(states[:, 0], np.arange(S))
    m = log_mu.max()
    return log_mu - (m + math.log(np.exp(log_mu - m).sum()))


def stationary_distribution(game: GameSpec, protocol, N: int, method: str = "exact", *,
                            mode: str = SIMPLE, cap: int = 200_000, dense_limit: int = 2000,
                            burn_in: int = 1000, samples: int = 10**6, seed: int = 0,
                            chains: int = 1000) -> StationaryResult:
    """Stationary distribution mu^N over the grid, in lexicographic state order.

    ``exact``: GTH state reduction up to ``dense_limit`` states, sparse LU above.
    ``birth_death``: detailed balance, two actions only.
    ``empirical``: occupation frequencies of ``chains`` parallel chains after ``burn_in`` periods.
    """
    table = chain_table(game, protocol, N, mode=mode, cap=cap)
    P = table.matrix()
    _check_ergodic(P)
    if method == "birth_death":
        if game.n != 2:
            raise ValueError("birth_death method needs exactly two actions")
        log_mu = _birth_death_log(table)
        mu = np.exp(log_mu)
    elif method == "exact":
        if table.size <= dense_limit:
            mu = gth_solve(P.toarray())
        else:
            A = (P.T - sp.identity(table.size, format="csr")).tolil()
            A[0, :] = 1.0
            b = np.zeros(table.size)
            b[0] = 1.0
            mu = spsolve(A.tocsc(), b)
            mu = np.clip(mu, 0.0, None)
            mu /= mu.sum()
        with np.errstate(divide="ignore"):
            log_mu = np.log(mu)
    elif method == "empirical":
        mu = _empirical_occupation(table, burn_in, samples, seed, chains)
        with np.errstate(divide="ignore"):
            log_mu = np.log(mu)
    else:
        raise ValueError(f"unknown stationary method {method!r}")
    residual = float(np.abs(P.T @ mu - mu).sum())
    if method != "empirical" and residual > 1e-10:
        raise ChainError(f"stationarity residual {residual:.3e} exceeds 1e-10")
    return StationaryResult(table.states, mu, log_mu, residual, method, N)


def _empirical_occupation(table: ChainTable, burn_in: int, samples: int, seed: int, chains: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    cdf = np.cumsum(table.weights, axis=1)
    state = rng.integers(0, table.size, size=chains)
    per_chain = math.ceil(samples / chains)
    visits = np.zeros(table.size, dtype=np.int64)
    for k in range(burn_in + per_chain):
        u = rng.random(chains)
        atom = (cdf[state] < u[:, None] * cdf[state, -1:]).sum(axis=1)
        atom = np.minimum(atom, cdf.shape[1] - 1)
        state = table.targets[state, atom]
        if k >= burn_in:
            visits += np.bincount(state, minlength=table.size)
    return visits / visits.sum()


# -- exit times ---------------------------------------------------------------------

@dataclass(frozen=True)
class ExitProblem:
    """Exit from O = {g < 0}; the chain exits when its interpolated path reaches g = 0.

    ``g`` maps states (..., n) to reals. ``cap`` bounds the clock time per replica.
    """

    g: Callable
    start: np.ndarray
    cap: float
    description: str = ""

    @classmethod
    def halfspace(cls, w, level: float, start, cap: float) -> "ExitProblem":
        """Exit when <w, x> >= level (affine boundary, so crossings are exact)."""
        w = np.asarray(w, dtype=float)
        return cls(_Halfspace(w, float(level)), np.asarray(start, dtype=float), cap,
                   f"halfspace w={w.tolist()} level={level}")

    @classmethod
    def interval(cls, coord: int, lo: float, hi: float, start, cap: float) -> "ExitProblem":
        """Exit when x_coord leaves (lo, hi)."""
        return cls(_Interval(coord, float(lo), float(hi)), np.asarray(start, dtype=float), cap,
                   f"x_{coord + 1} outside ({lo}, {hi})")

    @classmethod
    def ball(cls, center, radius: float, start, cap: float) -> "ExitProblem":
        """Exit when |x - center|_1 >= radius."""
        center = np.asarray(center, dtype=float)
        return cls(_BallComplement(center, float(radius)), np.asarray(start, dtype=float), cap,
                   f"l1 ball center={center.tolist()} radius={radius}")


@dataclass(frozen=True)
class _Halfspace:
    w: np.ndarray
    level: float

    def __call__(self, x):
        return np.asarray(x) @ self.w - self.level


@dataclass(frozen=True)
class _Interval:
    coord: int
    lo: float
    hi: float

    def __call__(self, x):
        v = np.asarray(x)[..., self.coord]
        return np.maximum(self.lo - v, v - self.hi)


@dataclass(frozen=True)
class _BallComplement:
    center: np.ndarray
    radius: float

    def __call__(self, x):
        return np.abs(np.asarray(x) - self.center).sum(axis=-1) - self.radius


@dataclass
class ExitSummary:
    N: int
    replicas: int
    times: np.ndarray           # exit times of uncensored replicas (clock units)
    censored: int
    mean: float
    median: float
    quantiles: dict
    log_rate: float             # (1/N) log(mean)
    all_censored: bool
    seed: int

    def to_json(self) -> str:
        return json.dumps({
            "N": self.N, "replicas": self.replicas, "censored": self.censored,
            "mean": self.mean, "median": self.median,
            "quantiles": {str(k): v for k, v in self.quantiles.items()},
            "log_rate": self.log_rate, "all_censored": self.all_censored, "seed": self.seed,
        }, indent=2, sort_keys=True)


def _exit_chunk(args):
    game, protocol, N, problem, replicas, seed, mode = args
    start = GridState.from_shares(problem.start, N)
    R = len(replicas)
    g0 = problem.g(start.x)
    out = np.full(R, np.nan)
    if g0 >= 0:
        out[:] = 0.0
        return out
    chain = BatchChain(game, protocol, np.tile(start.counts, (R, 1)), N, seed, replicas=replicas, mode=mode)
    active = np.ones(R, dtype=bool)
    g_prev = np.full(R, g0)
    max_steps = math.ceil(problem.cap * N)
    for k in range(max_steps):
        chain.step(active)
        g_now = problem.g(chain.x)
        hit = active & (g_now >= 0)
        if np.any(hit):
            # root of the linear interpolant of g within the step
            frac = g_prev[hit] / (g_prev[hit] - g_now[hit])
            out[hit] = (k + np.clip(frac, 0.0, 1.0)) / N
            active &= ~hit
            if not active.any():
                break
        g_prev = g_now
    return out


def exit_times(game: GameSpec, protocol, N: int, problem: ExitProblem, replicas: int, seed: int,
               mode: str = SIMPLE, workers: int = 1, batch: int = 500) -> np.ndarray:
    """Per-replica exit times; censored replicas are NaN."""
    if replicas < 1:
        raise ValueError("need at least one replica")
    ids = list(range(replicas))
    chunks = [ids[s:s + batch] for s in range(0, replicas, batch)]
    tasks = [(game, protocol, N, problem, c, seed, mode) for c in chunks]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_exit_chunk, tasks))
    else:
        parts = [_exit_chunk(t) for t in tasks]
    return np.concatenate(parts)


def summarize_exit_times(times: np.ndarray, N: int, seed: int) -> ExitSummary:
    done = times[~np.isnan(times)]
    censored = int(np.isnan(times).sum())
    if done.size == 0:
        return ExitSummary(N, times.size, done, censored, math.nan, math.nan, {}, math.nan, True, seed)
    mean = math.fsum(done) / done.size
    qs = {q: float(np.quantile(done, q)) for q in (0.1, 0.25, 0.5, 0.75, 0.9)}
    log_rate = math.log(mean) / N if mean > 0 else -math.inf
    return ExitSummary(N, times.size, done, censored, mean, qs[0.5], qs, log_rate, False, seed)


def exit_time_mc(game: GameSpec, protocol, N: int, problem: ExitProblem, replicas: int, seed: int,
                 mode: str = SIMPLE, workers: int = 1) -> ExitSummary:
    """Monte Carlo exit times of the interpolated process from O."""
    times = exit_times(game, protocol, N, problem, replicas, seed, mode=mode, workers=workers)
    return summarize_exit_times(times, N, seed)

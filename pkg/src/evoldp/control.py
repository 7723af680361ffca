"""Laplace values V^N = -(1/N) log E exp(-N h(X^N_1)) by exact dynamic programming,
and the variational problem inf over paths of c_x(phi) + h(phi_1)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from .dynamics import integrate, mean_dynamic
from .games import SIMPLE, GameSpec
from .largedev.entropy import cramer_batch, relative_entropy
from .largedev.paths import path_cost
from .process import IncrementLaw, SampledPath, chain_table, increment_weights, increments
from .protocols import switch_matrix_array
from .simplex import GridState, as_simplex_point

CHECK_TOL = 1e-10


@dataclass(frozen=True)
class TerminalObjective:
    """h(x) of the terminal state only; ``h`` maps states (..., n) to reals."""

    h: Callable
    description: str = ""

    def __call__(self, x):
        return np.asarray(self.h(np.asarray(x, dtype=float)), dtype=float)

    @classmethod
    def squared_distance(cls, y, weight: float = 1.0) -> "TerminalObjective":
        y = np.asarray(y, dtype=float)
        return cls(lambda x: weight * np.sum((x - y) ** 2, axis=-1), f"{weight} |x - {y.tolist()}|^2")

    @classmethod
    def constant(cls, c: float = 0.0) -> "TerminalObjective":
        return cls(lambda x: np.full(np.shape(x)[:-1], float(c)), f"constant {c}")


def tilted_minimizer(pi, gamma):
    """min over laws lam of R(lam || pi) + sum gamma lam: value -log sum exp(-gamma) pi,
    attained at lam* proportional to pi exp(-gamma). ``gamma`` may be +inf off the support.

    Returns (value, lam*) with lam* in the representation of ``pi``.
    """
    p = pi.vector() if isinstance(pi, IncrementLaw) else np.asarray(pi, dtype=float)
    g = np.asarray(gamma, dtype=float)
    live = (p > 0) & np.isfinite(g)
    if not live.any():
        raise ValueError("gamma is infinite on the whole support of pi")
    a = np.where(live, np.log(np.where(live, p, 1.0)) - np.where(live, g, 0.0), -np.inf)
    lse = logsumexp(a[live])
    value = -float(lse)
    lam = np.where(live, np.exp(a - lse), 0.0)
    check = relative_entropy(lam, p) + float(np.sum(g[live] * lam[live]))
    if abs(check - value) > CHECK_TOL * max(1.0, abs(value)):
        raise ArithmeticError(f"variational identity off by {abs(check - value):.3e}")
    if isinstance(pi, IncrementLaw):
        return value, IncrementLaw.from_vector(pi.n, lam)
    return value, lam


# -- dynamic programming ---------------------------------------------------------------------------

@dataclass
class LaplaceDP:
    value: float                    # V^N at x0
    values: np.ndarray              # (N+1, S) stage values V^N_k over the grid
    states: np.ndarray
    x0_index: int
    controls: np.ndarray | None = None     # (N, S, m) optimal tilted laws
    weights: np.ndarray | None = field(default=None, repr=False)
    targets: np.ndarray | None = field(default=None, repr=False)


def _terminal(h: TerminalObjective, states, N):
    vals = h(states / N)
    if not np.all(np.isfinite(vals)):
        raise ValueError("terminal objective must be finite on the grid")
    return vals


def laplace_dp_value(game: GameSpec, protocol, N: int, h: TerminalObjective, x0: GridState,
                     mode: str = SIMPLE, controls: bool = False, cap: int = 200_000) -> LaplaceDP:
    """Backward recursion V_k(x) = -(1/N) log sum_z exp(-N V_{k+1}(x + z/N)) nu^N(z|x), V_N = h.

    N periods of length 1/N cover the unit time interval.
    """
    table = chain_table(game, protocol, N, mode=mode, cap=cap)
    S = table.size
    idx0 = int(np.flatnonzero(np.all(table.states == np.asarray(x0.counts), axis=1))[0])
    hv = _terminal(h, table.states, N)
    values = np.empty((N + 1, S))
    values[N] = hv
    if np.all(hv == hv[0]):
        values[:] = hv[0]
        return LaplaceDP(float(hv[0]), values, table.states, idx0)
    with np.errstate(divide="ignore"):
        logw = np.log(table.weights)
    tgt = np.where(table.targets >= 0, table.targets, 0)
    ctrl = np.empty((N, S, table.weights.shape[1])) if controls else None
    for k in range(N - 1, -1, -1):
        a = logw - N * values[k + 1][tgt]
        lse = logsumexp(a, axis=1)
        values[k] = -lse / N
        if controls:
            ctrl[k] = np.exp(a - lse[:, None])
    return LaplaceDP(float(values[0, idx0]), values, table.states, idx0, ctrl, table.weights, table.targets)


def laplace_matrix_power(game: GameSpec, protocol, N: int, h: TerminalObjective, x0: GridState,
                         mode: str = SIMPLE) -> float:
    """V^N from the N-step transition matrix: -(1/N) log (P^N exp(-N h))(x0), shifted by min h."""
    table = chain_table(game, protocol, N, mode=mode)
    P = table.matrix().toarray()
    hv = _terminal(h, table.states, N)
    lo = hv.min()
    g = np.exp(-N * (hv - lo))
    idx0 = int(np.flatnonzero(np.all(table.states == np.asarray(x0.counts), axis=1))[0])
    e = np.linalg.matrix_power(P, N)[idx0] @ g
    return float(lo - math.log(e) / N)


def controlled_objective(dp: LaplaceDP, h: TerminalObjective, N: int) -> float:
    """Plug the DP's tilted controls into E[(1/N) sum_k R(lam_k || nu) + h(X_N)] under the
    controlled chain, evaluated exactly by propagating its law over the grid."""
    if dp.controls is None:
        raise ValueError("run laplace_dp_value with controls=True")
    S = dp.states.shape[0]
    p = np.zeros(S)
    p[dp.x0_index] = 1.0
    w = dp.weights
    tgt = np.where(dp.targets >= 0, dp.targets, 0)
    running = 0.0
    for k in range(N):
        lam = dp.controls[k]
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(lam > 0, lam * np.log(lam / w), 0.0).sum(axis=1)
        running += float(p @ r) / N
        nxt = np.zeros(S)
        np.add.at(nxt, tgt.ravel(), (p[:, None] * lam).ravel())
        p = nxt
    return running + float(p @ h(dp.states / N))


# -- variational problem ------------------------------------------------------------------------

@dataclass
class VariationalResult:
    value: float
    path: SampledPath
    cost: float
    terminal: float
    knots: np.ndarray
    restarts: int


def _knots_to_params(knots):
    k = np.clip(knots, 1e-12, None)
    logk = np.log(k)
    return (logk[:, :-1] - logk[:, -1:]).ravel()


def _params_to_knots(theta, K, n):
    t = np.concatenate([theta.reshape(K, n - 1), np.zeros((K, 1))], axis=1)
    t -= t.max(axis=1, keepdims=True)
    e = np.exp(t)
    return e / e.sum(axis=1, keepdims=True)


def piecewise_path(x0, knots, resolution: int) -> SampledPath:
    """Affine path through x0 and knots at times k/K, sampled ``resolution`` times per unit time."""
    K = knots.shape[0]
    q = max(1, resolution // K)
    pts = np.vstack([x0, knots])
    s = np.arange(q) / q
    fine = (pts[:-1, None, :] * (1 - s)[None, :, None] + pts[1:, None, :] * s[None, :, None]).reshape(-1, pts.shape[1])
    states = np.vstack([fine, pts[-1]])
    times = np.arange(states.shape[0]) / (K * q)
    return SampledPath(times, states, 1.0 / (K * q))


def _weights_jacobian(game, protocol, x, step: float = 1e-7):
    """d nu(a|x) / dx_i by central differences, shape (B, m, n)."""
    B, n = x.shape
    out = np.empty((B, increments(n).shape[0], n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = step
        hi = increment_weights(x + e, switch_matrix_array(game, protocol, x + e))
        lo = increment_weights(x - e, switch_matrix_array(game, protocol, x - e))
        out[:, :, i] = (hi - lo) / (2 * step)
    return out


def knot_path_cost(game, protocol, x0, knots, q: int):
    """Cost of the affine-between-knots path (q midpoint samples per segment) and its knot gradient.

    dL/dz is the optimal tilt u*; dL/dx = -sum_a lam*_a d log nu_a / dx by the envelope theorem.
    """
    K, n = knots.shape
    pts = np.vstack([x0, knots])
    c = (np.arange(q) + 0.5) / q
    mid = (pts[:-1, None, :] * (1 - c)[None, :, None] + pts[1:, None, :] * c[None, :, None]).reshape(-1, n)
    v = np.repeat(K * np.diff(pts, axis=0), q, axis=0)
    w = increment_weights(mid, switch_matrix_array(game, protocol, mid))
    vals, u, lam, _, _ = cramer_batch(w, v)
    dt = 1.0 / (K * q)
    if not np.all(np.isfinite(vals)):
        return math.inf, None
    dw = _weights_jacobian(game, protocol, mid)
    gx = -np.einsum("bm,bmi->bi", np.where(w > 0, lam / np.where(w > 0, w, 1.0), 0.0), dw)
    gx = gx.reshape(K, q, n)
    gz = u.reshape(K, q, n)
    grad = np.zeros((K + 1, n))
    grad[1:] += dt * (np.einsum("s,ksi->ki", c, gx) + K * gz.sum(axis=1))
    grad[:-1] += dt * (np.einsum("s,ksi->ki", 1 - c, gx) - K * gz.sum(axis=1))
    return math.fsum(vals * dt), grad[1:]


def laplace_variational(game: GameSpec, protocol, h: TerminalObjective, x0, knots: int = 8,
                        restarts: int = 4, seed: int = 0, candidates=None, warm_start: SampledPath | None = None,
                        resolution: int = 128, maxiter: int = 300) -> VariationalResult:
    """Minimize c_x(phi) + h(phi_1) over affine-between-knots paths on [0, 1] (local search).

    Seeds: the mean-dynamic solution, straight lines to each candidate terminal
    state, ``warm_start`` if given, and ``restarts`` random knot sets.
    A constant h is minimized exactly by the zero-cost mean-dynamic path.
    """
    if knots < 2:
        raise ValueError("need at least two knots")
    x0 = as_simplex_point(x0, tol=1e-9)
    n, K = x0.size, knots
    tk = np.arange(1, K + 1) / K
    ode = integrate(mean_dynamic(game, protocol), x0, 1.0, 1.0 / resolution)
    if np.ptp(h(ode.states)) == 0 and np.ptp(h(np.eye(n))) == 0 and np.ptp(h(np.full((1, n), 1.0 / n))) == 0:
        c = float(h(ode.states[-1]))
        return VariationalResult(c, ode, 0.0, c, ode.at(tk), 0)

    q = max(1, resolution // K)

    def objective(theta):
        kn = _params_to_knots(theta, K, n)
        cost, g = knot_path_cost(game, protocol, x0, kn, q)
        if not np.isfinite(cost):
            return 1e6, np.zeros_like(theta)
        y = kn[-1]
        hy = float(h(y))
        gh = np.empty(n)
        for i in range(n):
            e = np.zeros(n)
            e[i] = 1e-7
            gh[i] = (float(h(y + e)) - float(h(y - e))) / 2e-7
        g[-1] += gh
        # chain rule through the softmax parametrization (last logit pinned to 0)
        gt = kn * (g - np.einsum("ki,ki->k", g, kn)[:, None])
        return cost + hy, gt[:, :-1].ravel()

    seeds = [ode.at(tk)]
    rng = np.random.default_rng(seed)
    for y in ([] if candidates is None else candidates):
        y = np.asarray(y, dtype=float)
        seeds.append(x0 + tk[:, None] * (y - x0))
    if warm_start is not None:
        seeds.append(warm_start.at(tk))
    for _ in range(restarts):
        seeds.append(x0 + tk[:, None] * (rng.dirichlet(np.ones(n)) - x0))
    best = None
    for s in seeds:
        theta0 = _knots_to_params(np.atleast_2d(s))
        start = objective(theta0)[0]
        res = minimize(objective, theta0, jac=True, method="L-BFGS-B", options={"maxiter": maxiter})
        val, theta = (res.fun, res.x) if res.fun <= start else (start, theta0)
        if best is None or val < best[0]:
            best = (val, theta)
    kn = _params_to_knots(best[1], K, n)
    path = piecewise_path(x0, kn, resolution)
    cost = path_cost(path, game, protocol).value
    term = float(h(kn[-1]))
    return VariationalResult(cost + term, path, cost, term, kn, len(seeds))

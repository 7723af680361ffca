"""Logit choice in potential games: the logit potential, its Hamilton-Jacobi
identities, exit costs and rate comparisons against the finite chain."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import logsumexp, xlogy

from .dynamics import find_rest_point, integrate, logit_map, mean_dynamic
from .games import CongestionGame, GameSpec, MatchingGame
from .largedev.entropy import log_mgf
from .process import ExitProblem, exit_time_mc, increment_weights, increments, stationary_distribution
from .protocols import Logit, switch_matrix
from .simplex import as_simplex_point, simplex_mesh, support


@dataclass(frozen=True)
class PotentialGame:
    """A game with potential f, grad f = F."""

    game: GameSpec
    f: Callable
    grad: Callable

    @property
    def n(self) -> int:
        return self.game.n


def potential_game(game: GameSpec, f: Callable | None = None) -> PotentialGame:
    """Wrap a game with its potential: closed form for congestion and symmetric matching games."""
    if f is not None:
        return PotentialGame(game, f, game.payoff)
    if isinstance(game, CongestionGame):
        return PotentialGame(game, game.potential, game.payoff)
    if isinstance(game, MatchingGame) and np.allclose(game.A, game.A.T):
        A = game.A
        return PotentialGame(game, lambda x: 0.5 * np.einsum("...i,ij,...j->...", x, A, x), game.payoff)
    raise ValueError("no closed-form potential for this game; pass f explicitly")


def gradient_error(pg: PotentialGame, samples: int = 1000, seed: int = 0, step: float = 1e-6) -> float:
    """max |grad f - central differences of f| over random states (full-space gradient)."""
    rng = np.random.default_rng(seed)
    x = rng.dirichlet(np.ones(pg.n), size=samples)
    fd = np.empty_like(x)
    for i in range(pg.n):
        e = np.zeros(pg.n)
        e[i] = step
        fd[:, i] = (pg.f(x + e) - pg.f(x - e)) / (2 * step)
    return float(np.abs(fd - pg.grad(x)).max())


def entropy_term(x) -> np.ndarray:
    """h(x) = sum x_i log x_i with 0 log 0 = 0."""
    return xlogy(x, x).sum(axis=-1)


def logit_potential(pg: PotentialGame, eta: float, x, face=None):
    """f^eta(x) = f(x)/eta - sum x_i log x_i; with ``face`` R, the face version
    f(x)/eta - sum_{i in R} x_i log x_i - sum_{j not in R} x_j. Batched over x."""
    x = np.asarray(x, dtype=float)
    if face is None:
        return pg.f(x) / eta - entropy_term(x)
    R = np.zeros(pg.n, dtype=bool)
    R[list(face)] = True
    if np.any(x[..., ~R] > 0):
        raise ValueError("support of x must lie in the face R")
    return pg.f(x) / eta - xlogy(x[..., R], x[..., R]).sum(axis=-1) - x[..., ~R].sum(axis=-1)


def projected_gradient(pg: PotentialGame, eta: float, x, face=None) -> np.ndarray:
    """P(F(x)/eta - sum_{i in R} e_i log x_i); R defaults to all actions (x interior)."""
    x = np.asarray(x, dtype=float)
    R = np.arange(pg.n) if face is None else np.array(sorted(face))
    g = pg.grad(x) / eta
    g[..., R] -= np.log(x[..., R])
    return g - g.mean(axis=-1, keepdims=True)


# -- Hamilton-Jacobi identities ----------------------------------------------------------------

@dataclass
class HJResult:
    H: float                  # log-mgf at the negative face gradient
    ratio: float              # closed form sum_{i in R} exp(F_i/eta) / sum_k exp(F_k/eta)
    H_finite_tilt: float      # same, keeping finite tilts on actions outside R


def hj_residual(pg: PotentialGame, eta: float, x, face=None) -> HJResult:
    """H(x, -grad_0 f^eta_R(x)) for x with support exactly R.

    Off R the tilt -grad_0 f^eta_R is taken at its limit -infinity (the log x_j
    terms for unused actions), so moves into unused actions carry no weight; with
    finite tilts there the sum gains a factor (1 + |S \\ R|), reported in
    ``H_finite_tilt``.
    """
    x = as_simplex_point(x, tol=1e-9)
    S = support(x)
    R = S if face is None else np.array(sorted(face))
    if set(S.tolist()) != set(R.tolist()):
        raise ValueError(f"support of x is {S.tolist()}, expected {R.tolist()}")
    protocol = Logit(eta)
    sigma = switch_matrix(pg.game, protocol, x)
    u = -projected_gradient(pg, eta, x, R)
    outside = np.ones(pg.n, dtype=bool)
    outside[R] = False
    F = pg.grad(x)
    ratio = float(np.exp(logsumexp(F[R] / eta) - logsumexp(F / eta)))
    H_fin, _ = log_mgf(x, u, sigma)
    if not outside.any():
        return HJResult(H_fin, ratio, H_fin)
    w = increment_weights(x, sigma.entries)
    A = increments(pg.n)
    into_unused = (A[:, outside] > 0).any(axis=1)
    keep = (w > 0) & ~into_unused
    H = float(logsumexp(np.log(w[keep]) + A[keep] @ u))
    return HJResult(H, ratio, H_fin)


def hfoc_residual(pg: PotentialGame, eta: float, x) -> np.ndarray:
    """grad_u H(x, -grad f^eta(x)) + (M^eta(F(x)) - x) at an interior x."""
    x = as_simplex_point(x, tol=1e-9)
    if np.any(x <= 0):
        raise ValueError("x must be interior")
    sigma = switch_matrix(pg.game, Logit(eta), x)
    _, grad = log_mgf(x, -projected_gradient(pg, eta, x), sigma)
    return grad + (logit_map(pg.game, eta, x) - x)


def partial_H_closed_form(pg: PotentialGame, eta: float, x, u) -> np.ndarray:
    """Gradient of H(x, .) written out for logit choice (ratio of exponential sums)."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    a = pg.grad(x) / eta
    c = a.max()
    ea = np.exp(a - c)
    D = u[:, None] - u[None, :]          # D[i, j] = u_i - u_j
    inflow = np.exp(D) * x[None, :] * ea[:, None]      # exp(u_i - u_j) x_j exp(a_i)
    outflow = np.exp(-D) * x[:, None] * ea[None, :]    # exp(u_j - u_i) x_i exp(a_j)
    np.fill_diagonal(inflow, 0.0)
    np.fill_diagonal(outflow, 0.0)
    # E exp(u' zeta) = sum_{i,j} x_i M_j exp(u_j - u_i) including i == j
    mgf = (x[:, None] * ea[None, :] * np.exp(-D)).sum() / ea.sum()
    return (inflow.sum(axis=1) - outflow.sum(axis=1)) / (mgf * ea.sum())


# -- Lyapunov property -------------------------------------------------------------------------

@dataclass
class LyapunovReport:
    ok: bool
    worst_drop: float            # most negative per-step change of f^eta
    worst_time: float | None
    terminal_speed: float        # max over starts of |M(F(x_T)) - x_T|_1
    terminal_values: np.ndarray


def ascent_rate(pg: PotentialGame, eta: float, x) -> np.ndarray:
    """d/dt f^eta along the logit dynamic: (log y - log x)'(y - x) with y = M^eta(F(x))."""
    x = np.asarray(x, dtype=float)
    y = logit_map(pg.game, eta, x)
    return np.einsum("...i,...i->...", np.log(y) - np.log(x), y - x)


def lyapunov_check(pg: PotentialGame, eta: float, x0_list, T: float, dt: float = 0.01,
                   slack: float = 1e-9, speed_tol: float = 1e-6) -> LyapunovReport:
    vf = mean_dynamic(pg.game, Logit(eta))
    worst, worst_t, speeds, finals = 0.0, None, [], []
    for x0 in x0_list:
        path = integrate(vf, x0, T, dt)
        vals = logit_potential(pg, eta, path.states)
        d = np.diff(vals)
        k = int(np.argmin(d))
        if d[k] < worst:
            worst, worst_t = float(d[k]), float(path.times[k])
        speeds.append(float(np.abs(vf(path.states[-1])).sum()))
        finals.append(vals[-1])
    term = max(speeds)
    return LyapunovReport(worst >= -slack and term <= speed_tol, worst, worst_t, term, np.array(finals))


# -- exit costs and rates ------------------------------------------------------------------------

def logit_rest_point(pg: PotentialGame, eta: float) -> np.ndarray:
    return find_rest_point(pg.game, Logit(eta))


def exit_cost(pg: PotentialGame, eta: float, y=None, *, boundary=None, radius: float | None = None,
              x_star=None, mesh: int = 140) -> float:
    """C_y = f^eta(x*) - f^eta(y), or its minimum over a boundary.

    The boundary is an explicit array of states, or the l1 sphere of ``radius``
    around x* within X, swept radially from a barycentric mesh (about 10^4 points at n=3).
    """
    xs = logit_rest_point(pg, eta) if x_star is None else np.asarray(x_star, dtype=float)
    top = float(logit_potential(pg, eta, xs))
    if y is not None:
        return top - float(logit_potential(pg, eta, as_simplex_point(y, tol=1e-9)))
    if boundary is None:
        if radius is None:
            raise ValueError("give y, an explicit boundary, or a radius")
        boundary = sphere_points(xs, radius, mesh)
    vals = logit_potential(pg, eta, np.asarray(boundary, dtype=float))
    return top - float(np.max(vals))


def sphere_points(center, radius: float, mesh: int) -> np.ndarray:
    """Points of X at l1 distance ``radius`` from ``center``, one per mesh direction."""
    center = np.asarray(center, dtype=float)
    m = simplex_mesh(center.size, mesh)
    d = m - center
    norm = np.abs(d).sum(axis=1)
    d = d[norm > 0] / norm[norm > 0, None]
    pts = center + radius * d
    return pts[np.all(pts >= -1e-15, axis=1)]


@dataclass
class RateRow:
    N: int
    rate: float
    target: float
    gap: float
    detail: dict


def stationary_rates(pg: PotentialGame, eta: float, N_list, y, delta: float, method: str = "birth_death") -> list[RateRow]:
    """-(1/N) log mu^N(B_delta(y)) (l1 ball) against C_y."""
    y = as_simplex_point(y, tol=1e-9)
    C = exit_cost(pg, eta, y)
    rows = []
    for N in N_list:
        res = stationary_distribution(pg.game, Logit(eta), N, method=method)
        x = res.states / N
        near = np.abs(x - y).sum(axis=1) <= delta + 1e-12
        if not near.any():
            raise ValueError(f"no grid state of X^{N} within {delta} of y")
        rate = -float(logsumexp(res.log_mu[near])) / N
        rows.append(RateRow(N, rate, C, abs(rate - C), {"states": int(near.sum())}))
    return rows


def exit_rates(pg: PotentialGame, eta: float, N_list, problem: ExitProblem, C: float, replicas: int,
               seed: int, workers: int = 1) -> list[RateRow]:
    """(1/N) log(mean exit time) from Monte Carlo against C_{dO}."""
    rows = []
    for k, N in enumerate(N_list):
        s = exit_time_mc(pg.game, Logit(eta), N, problem, replicas, seed + k, workers=workers)
        if s.all_censored:
            raise RuntimeError(f"all replicas censored at N={N}")
        rows.append(RateRow(N, s.log_rate, C, abs(s.log_rate - C),
                            {"mean": s.mean, "censored": s.censored, "replicas": s.replicas}))
    return rows


def rate_compare(pg: PotentialGame, eta: float, mode: str, N_list, *, y=None, delta: float = 0.0,
                 problem: ExitProblem | None = None, boundary=None, replicas: int = 500, seed: int = 0,
                 workers: int = 1) -> list[RateRow]:
    if mode == "stationary":
        return stationary_rates(pg, eta, N_list, y, delta, "birth_death" if pg.n == 2 else "exact")
    if mode == "exit_time":
        if problem is None or boundary is None:
            raise ValueError("exit mode needs an ExitProblem and its boundary states")
        C = exit_cost(pg, eta, boundary=boundary)
        return exit_rates(pg, eta, N_list, problem, C, replicas, seed, workers)
    raise ValueError(f"unknown mode {mode!r}")


def levelset_grid(pg: PotentialGame, eta: float, mesh: int) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric mesh of X and f^eta at each point."""
    pts = simplex_mesh(pg.n, mesh)
    return pts, logit_potential(pg, eta, pts)


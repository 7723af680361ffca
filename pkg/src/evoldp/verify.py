"""Fast invariant suite behind ``evoldp verify``.

Each check returns a :class:`Check`; the suite runs in well under a minute.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .control import TerminalObjective, laplace_dp_value, laplace_matrix_power
from .dynamics import find_rest_point, integrate, mean_dynamic, mean_field
from .games import CongestionGame, three_link_congestion_game
from .largedev.entropy import cramer_transform, law_weights
from .largedev.faces import face_project, projection_residuals
from .largedev.sanov import HalfSpace, sanov_check
from .logit_potential import (exit_cost, hfoc_residual, hj_residual, logit_potential, lyapunov_check,
                              potential_game)
from .process import IncrementLaw, increments, stationary_distribution
from .protocols import ImitationMutation, Logit, PairwiseLogit, switch_matrix_array
from .simplex import GridState, simplex_mesh


@dataclass
class Check:
    name: str
    ok: bool
    detail: str
    seconds: float = 0.0


def random_face_instance(rng, n: int):
    """A random increment law and face I with mean nonnegative off I."""
    size = int(rng.integers(1, n))
    I = np.sort(rng.choice(n, size=size, replace=False))
    off = rng.exponential(size=(n, n)) * (rng.random((n, n)) < 0.7)
    np.fill_diagonal(off, 0.0)
    for k in np.setdiff1d(np.arange(n), I):
        deficit = off[k].sum() - off[:, k].sum()
        if deficit > 0:
            off[rng.choice(I), k] += deficit
    total = off.sum() + rng.exponential()
    off /= total
    null = max(0.0, 1.0 - off.sum())
    return IncrementLaw(off, null), I


def _rest_points():
    g = three_link_congestion_game()
    a = find_rest_point(g, Logit(0.25))
    b = find_rest_point(g, Logit(0.1))
    err = max(np.abs(a - [0.3563, 0.4482, 0.1956]).max(), np.abs(b - [0.3648, 0.4732, 0.1620]).max())
    return err <= 5e-4, f"max coordinate error {err:.2e}"


def _potential_anchors():
    pg = potential_game(three_link_congestion_game())
    e1 = np.array([1.0, 0.0, 0.0])
    errs = []
    for eta, f_e1, f_star in ((0.25, -20.0, -10.73), (0.1, -50.0, -28.38)):
        xs = find_rest_point(pg.game, Logit(eta))
        errs.append(abs(logit_potential(pg, eta, e1) - f_e1))
        errs.append(abs(logit_potential(pg, eta, xs) - f_star) / 10)
    return max(errs) <= 1e-3, f"worst scaled error {max(errs):.2e}"


def _tangency():
    g = three_link_congestion_game()
    x = np.random.default_rng(1).dirichlet(np.ones(3), size=2000)
    worst = 0.0
    for p in (Logit(0.25), PairwiseLogit(0.25), ImitationMutation(0.05, 1 / 9, 1.0)):
        worst = max(worst, float(np.abs(mean_field(g, p, x).sum(axis=1)).max()))
        S = switch_matrix_array(g, p, x)
        worst = max(worst, float(np.abs(S.sum(axis=2) - 1).max()))
    return worst <= 1e-12, f"max |sum| error {worst:.2e}"


def _hamilton_jacobi():
    pg = potential_game(three_link_congestion_game())
    rng = np.random.default_rng(2)
    xs = rng.dirichlet(np.ones(3), size=100)
    H = max(abs(hj_residual(pg, 0.25, x).H) for x in xs)
    foc = max(np.abs(hfoc_residual(pg, 0.25, x)).max() for x in xs)
    face = hj_residual(pg, 0.25, [0.3, 0.7, 0.0])
    ratio_err = abs(np.exp(face.H) - face.ratio)
    ok = H <= 1e-8 and foc <= 1e-8 and face.H < 0 and ratio_err <= 1e-10
    return ok, f"|H| {H:.1e}, foc {foc:.1e}, face H {face.H:.4f}, ratio error {ratio_err:.1e}"


def _cramer():
    g = three_link_congestion_game()
    p = Logit(0.25)
    rng = np.random.default_rng(3)
    worst, vertex = 0.0, 0.0
    for _ in range(20):
        x = rng.dirichlet(np.ones(3))
        sigma = switch_matrix_array(g, p, x)
        mean = law_weights(x, sigma) @ increments(3)
        z = mean + 0.3 * rng.normal(size=3)
        z -= z.mean()
        d = cramer_transform(x, z, sigma).value
        q = cramer_transform(x, z, sigma, method="primal_oracle").value
        if np.isfinite(d) or np.isfinite(q):
            worst = max(worst, abs(d - q))
        i, j = rng.choice(3, size=2, replace=False)
        e = np.zeros(3)
        e[j], e[i] = 1.0, -1.0
        vertex = max(vertex, abs(cramer_transform(x, e, sigma).value + np.log(x[i] * sigma[i, j])))
        worst = max(worst, cramer_transform(x, mean, sigma).value)
    return worst <= 1e-6 and vertex <= 1e-9, f"dual/primal {worst:.1e}, vertex {vertex:.1e}"


def _face_projection():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(500):
        n = int(rng.integers(2, 6))
        lam, I = random_face_instance(rng, n)
        bar, chi = face_project(lam, I)
        r = projection_residuals(lam, bar, chi, I)
        worst = max(worst, r["rows"], r["cols"], r["null"], r["chi_excess"], r["variation_excess"], r["mean"],
                    r["outside_rows"], float(-chi.min(initial=0.0)))
    return worst <= 1e-12, f"worst residual {worst:.1e}"


def _laplace():
    g = CongestionGame(([1, 8], [2, 4]), np.eye(2))
    h = TerminalObjective.squared_distance([0.2, 0.8], 5.0)
    x0 = GridState.from_shares([0.5, 0.5], 30)
    a = laplace_dp_value(g, Logit(1.0), 30, h, x0).value
    b = laplace_matrix_power(g, Logit(1.0), 30, h, x0)
    return abs(a - b) <= 1e-10, f"DP {a:.12f} vs matrix power {b:.12f}"


def _stationary():
    g = CongestionGame(([1, 8], [2, 4]), np.eye(2))
    a = stationary_distribution(g, Logit(0.25), 60, method="exact")
    b = stationary_distribution(g, Logit(0.25), 60, method="birth_death")
    err = float(np.abs(a.mu - b.mu).max())
    return err <= 1e-12, f"GTH vs detailed balance {err:.1e}, residual {a.residual:.1e}"


def _lyapunov():
    pg = potential_game(three_link_congestion_game())
    starts = np.random.default_rng(5).dirichlet(np.ones(3), size=5)
    rep = lyapunov_check(pg, 0.25, starts, T=30.0, dt=0.02)
    return rep.ok, f"worst step change {rep.worst_drop:.1e}, terminal speed {rep.terminal_speed:.1e}"


def _exit_cost_path():
    from .largedev.paths import path_cost
    pg = potential_game(three_link_congestion_game())
    p = Logit(0.25)
    xs = find_rest_point(pg.game, p)
    y = np.array([0.2, 0.5, 0.3])
    rev = integrate(mean_dynamic(pg.game, p), y, 200.0, 0.01, direction="reverse", rest_point=xs)
    c = path_cost(rev, pg.game, p).value
    C = exit_cost(pg, 0.25, y, x_star=xs)
    return abs(c - C) <= 1e-3 * C, f"path cost {c:.6f} vs closed form {C:.6f}"


def _sanov():
    g = CongestionGame(([1, 8], [2, 4]), np.eye(2))
    x = np.array([0.5, 0.5])
    sigma = switch_matrix_array(g, Logit(1.0), x)
    rows = sanov_check(x, sigma, [10, 20, 40], HalfSpace(np.array([1.0, -1.0]), 0.5))
    gaps = [r.gap for r in rows]
    ok = gaps[-1] <= 0.15 and all(a > b for a, b in zip(gaps, gaps[1:]))
    return ok, "gaps " + ", ".join(f"{v:.3f}" for v in gaps)


def _mesh():
    m = simplex_mesh(3, 20)
    return bool(np.allclose(m.sum(axis=1), 1) and m.shape[0] == 231), f"{m.shape[0]} mesh points"


CHECKS = [
    ("rest points", _rest_points),
    ("logit potential anchors", _potential_anchors),
    ("tangency and row sums", _tangency),
    ("simplex mesh", _mesh),
    ("Hamilton-Jacobi identities", _hamilton_jacobi),
    ("Cramer transform routes", _cramer),
    ("face projection", _face_projection),
    ("Laplace DP vs matrix power", _laplace),
    ("stationary solvers", _stationary),
    ("Lyapunov ascent", _lyapunov),
    ("reverse path cost", _exit_cost_path),
    ("multinomial rates", _sanov),
]


def run_all(names=None) -> list[Check]:
    out = []
    for name, fn in CHECKS:
        if names and name not in names:
            continue
        t = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failed check, not a crashed suite
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append(Check(name, bool(ok), detail, time.perf_counter() - t))
    return out

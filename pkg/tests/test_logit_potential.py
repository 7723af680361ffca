import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from evoldp.dynamics import find_rest_point, logit_map
from evoldp.games import MatchingGame
from evoldp.largedev.entropy import log_mgf
from evoldp.logit_potential import (ascent_rate, exit_cost, gradient_error, hfoc_residual, hj_residual,
                                    levelset_grid, logit_potential, lyapunov_check, partial_H_closed_form,
                                    potential_game, projected_gradient, rate_compare, sphere_points)
from evoldp.process import ExitProblem
from evoldp.protocols import Logit, switch_matrix
from evoldp.simplex import simplex_mesh

X25 = np.array([0.3563, 0.4482, 0.1956])
X10 = np.array([0.3648, 0.4732, 0.1620])


def test_potential_gradient(pg3, pg2):
    assert gradient_error(pg3) <= 1e-6
    assert gradient_error(pg2) <= 1e-6
    coord = potential_game(MatchingGame(np.array([[2.0, 0.5], [0.5, 1.0]])))
    assert gradient_error(coord) <= 1e-6
    with pytest.raises(ValueError):
        potential_game(MatchingGame(np.array([[0.0, 1.0], [-1.0, 0.0]])))


def test_potential_anchors(pg3):
    assert logit_potential(pg3, 0.25, [1.0, 0, 0]) == pytest.approx(-20.0, abs=1e-12)
    assert logit_potential(pg3, 0.1, [1.0, 0, 0]) == pytest.approx(-50.0, abs=1e-12)
    assert logit_potential(pg3, 0.25, X25) == pytest.approx(-10.73, abs=0.01)
    assert logit_potential(pg3, 0.1, X10) == pytest.approx(-28.38, abs=0.01)


def test_face_version_agrees_on_its_face(pg3):
    rng = np.random.default_rng(0)
    for _ in range(100):
        x = np.zeros(3)
        x[[0, 2]] = rng.dirichlet(np.ones(2))
        assert logit_potential(pg3, 0.25, x, face=[0, 2]) == pytest.approx(logit_potential(pg3, 0.25, x), abs=1e-12)
    with pytest.raises(ValueError):
        logit_potential(pg3, 0.25, X25, face=[0, 1])


def test_concave_along_segments(pg3):
    rng = np.random.default_rng(1)
    a = rng.dirichlet(np.ones(3), size=1000)
    b = rng.dirichlet(np.ones(3), size=1000)
    mid = logit_potential(pg3, 0.25, (a + b) / 2)
    ends = (logit_potential(pg3, 0.25, a) + logit_potential(pg3, 0.25, b)) / 2
    assert np.all(mid >= ends - 1e-12)


def test_mesh_argmax_is_equal_delay_state(pg3, links3):
    m = simplex_mesh(3, 400)
    best = m[np.argmax(pg3.f(m))]
    assert np.abs(best - [0.375, 0.5, 0.125]).max() <= 1 / 400
    delays = links3.costs(links3.utilization(np.array([0.375, 0.5, 0.125])))
    assert np.abs(delays - 4).max() <= 1e-12


@pytest.mark.parametrize("eta", [0.25, 0.1, 1.0])
def test_rest_point_is_potential_maximizer(pg3, eta):
    m = simplex_mesh(3, 400)
    best = m[np.argmax(logit_potential(pg3, eta, m))]
    assert np.abs(find_rest_point(pg3.game, Logit(eta)) - best).max() <= 1 / 400


def test_lyapunov_ascent(pg3):
    starts = np.random.default_rng(2).dirichlet(np.ones(3), size=20)
    rep = lyapunov_check(pg3, 0.25, starts, T=40.0, dt=0.02)
    assert rep.ok and rep.worst_drop >= -1e-9
    assert np.all((rep.terminal_values >= -10.74) & (rep.terminal_values <= -10.72))


def test_lyapunov_flat_at_rest_point(pg3):
    xs = find_rest_point(pg3.game, Logit(0.25))
    rep = lyapunov_check(pg3, 0.25, [xs], T=5.0)
    assert np.abs(rep.terminal_values[0] - logit_potential(pg3, 0.25, xs)) <= 1e-9


def test_ascent_rate_identity(pg3):
    rng = np.random.default_rng(3)
    for x in rng.dirichlet(np.ones(3), size=200):
        v = logit_map(pg3.game, 0.25, x) - x
        f = lambda t: logit_potential(pg3, 0.25, x + t * v)
        s = 1e-4 * min(1.0, x.min() / np.abs(v).max())
        # fourth-order central stencil
        fd = (8 * (f(s) - f(-s)) - (f(2 * s) - f(-2 * s))) / (12 * s)
        assert ascent_rate(pg3, 0.25, x) == pytest.approx(fd, abs=1e-6)
        assert ascent_rate(pg3, 0.25, x) >= 0


@given(st.floats(0.02, 0.96), st.floats(0.02, 0.96))
def test_hj_interior(a, b):
    from evoldp.games import three_link_congestion_game
    pg = potential_game(three_link_congestion_game())
    if a + b >= 0.99:
        return
    x = np.array([a, b, 1 - a - b])
    r = hj_residual(pg, 0.25, x)
    assert abs(r.H) <= 1e-8 and r.ratio == 1.0
    assert np.abs(hfoc_residual(pg, 0.25, x)).max() <= 1e-8


def test_hj_on_faces(pg3):
    for x, R in (([0.3, 0.7, 0.0], [0, 1]), ([0.0, 0.4, 0.6], [1, 2]), ([0.0, 1.0, 0.0], [1])):
        r = hj_residual(pg3, 0.25, x, face=R)
        assert r.H < 0
        assert abs(np.exp(r.H) - r.ratio) <= 1e-10
        assert r.H_finite_tilt > r.H
    with pytest.raises(ValueError):
        hj_residual(pg3, 0.25, [0.3, 0.7, 0.0], face=[0, 1, 2])


def test_hfoc_terms_vanish_at_rest_point(pg3):
    xs = find_rest_point(pg3.game, Logit(0.25))
    sigma = switch_matrix(pg3.game, Logit(0.25), xs)
    _, g = log_mgf(xs, -projected_gradient(pg3, 0.25, xs), sigma)
    assert np.abs(g).max() <= 1e-10
    assert np.abs(logit_map(pg3.game, 0.25, xs) - xs).max() <= 1e-10
    with pytest.raises(ValueError):
        hfoc_residual(pg3, 0.25, [0.5, 0.5, 0.0])


def test_partial_H_routes(pg3):
    rng = np.random.default_rng(4)
    for _ in range(100):
        x = rng.dirichlet(np.ones(3))
        u = rng.normal(size=3)
        sigma = switch_matrix(pg3.game, Logit(0.25), x)
        _, g = log_mgf(x, u, sigma)
        assert np.abs(partial_H_closed_form(pg3, 0.25, x, u) - g).max() <= 1e-10
        fd = np.array([(log_mgf(x, u + 1e-5 * e, sigma)[0] - log_mgf(x, u - 1e-5 * e, sigma)[0]) / 2e-5
                       for e in np.eye(3)])
        assert np.abs(fd - g).max() <= 1e-6


def test_exit_costs(pg3):
    xs = find_rest_point(pg3.game, Logit(0.25))
    assert exit_cost(pg3, 0.25, xs, x_star=xs) == 0.0
    assert exit_cost(pg3, 0.25, [1.0, 0, 0]) == pytest.approx(9.27, abs=0.02)
    assert exit_cost(pg3, 0.1, [1.0, 0, 0]) == pytest.approx(21.62, abs=0.02)
    ring = sphere_points(xs, 0.2, 140)
    assert np.allclose(np.abs(ring - xs).sum(axis=1), 0.2)
    C = exit_cost(pg3, 0.25, radius=0.2, x_star=xs)
    assert 0 < C <= min(exit_cost(pg3, 0.25, y, x_star=xs) for y in ring[::50]) + 1e-12
    assert exit_cost(pg3, 0.25, boundary=ring, x_star=xs) == C
    with pytest.raises(ValueError):
        exit_cost(pg3, 0.25)


def test_levelset_spans(pg3):
    pts, vals = levelset_grid(pg3, 0.25, 200)
    assert vals.max() - vals.min() == pytest.approx(9.27, abs=0.02)
    _, vals = levelset_grid(pg3, 0.1, 200)
    assert vals.max() - vals.min() == pytest.approx(21.62, abs=0.02)
    assert pts.shape == (201 * 202 // 2, 3)


def test_stationary_rate_near_attractor(pg2):
    xs = find_rest_point(pg2.game, Logit(0.25))
    rows = rate_compare(pg2, 0.25, "stationary", [50, 100, 200], y=xs, delta=0.05)
    rates = [r.rate for r in rows]
    assert rates[0] > rates[1] > rates[2] and rates[-1] <= 0.01


def test_stationary_rate_gap_shrinks(pg2):
    rows = rate_compare(pg2, 0.25, "stationary", [50, 100, 200, 400], y=[0.2, 0.8])
    gaps = [r.gap for r in rows]
    assert all(a > b for a, b in zip(gaps, gaps[1:]))


def test_exit_rate_small_run(pg2):
    xs = find_rest_point(pg2.game, Logit(0.25))
    prob = ExitProblem.interval(0, 0.36, 0.48, xs, 1e6)
    bnd = np.array([[0.36, 0.64], [0.48, 0.52]])
    rows = rate_compare(pg2, 0.25, "exit_time", [10, 20], problem=prob, boundary=bnd, replicas=50, seed=3)
    assert rows[0].target == pytest.approx(exit_cost(pg2, 0.25, boundary=bnd))
    assert all(r.detail["censored"] == 0 for r in rows)
    with pytest.raises(ValueError):
        rate_compare(pg2, 0.25, "exit_time", [10])
    with pytest.raises(ValueError):
        rate_compare(pg2, 0.25, "other", [10])

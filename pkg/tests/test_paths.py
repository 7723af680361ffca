import math

import numpy as np
import pytest

from evoldp.dynamics import find_rest_point, integrate, mean_dynamic
from evoldp.largedev.paths import coarsen, interior_shift, path_cost, path_surgery
from evoldp.logit_potential import exit_cost
from evoldp.process import SampledPath
from evoldp.protocols import Logit, switch_floor


def smooth_path(dt, T=1.0):
    t = np.arange(0.0, T + dt / 2, dt)
    base = np.array([0.35, 0.45, 0.2])
    wiggle = 0.1 * np.column_stack([np.sin(2 * t), np.cos(3 * t) - 1, -np.sin(2 * t) - np.cos(3 * t) + 1])
    return SampledPath(t, base + wiggle, dt)


def boundary_path(samples=401):
    t = np.linspace(0.0, 1.0, samples)
    a, b, c = np.array([0.0, 0.3, 0.7]), np.array([0.5, 0.5, 0.0]), np.array([0.2, 0.0, 0.8])
    s = np.clip(2 * t, 0, 1)[:, None]
    r = np.clip(2 * t - 1, 0, 1)[:, None]
    states = np.where(t[:, None] <= 0.5, a + s * (b - a), b + r * (c - b))
    return SampledPath(t, states, t[1])


def curved_path(samples=401):
    t = np.linspace(0.0, 1.0, samples)
    a = 0.6 * t**2
    b = 0.3 + 0.2 * np.sin(3 * t)
    return SampledPath(t, np.column_stack([a, b, 1 - a - b]), t[1])


def test_mean_dynamic_path_is_nearly_free(links3):
    ode = integrate(mean_dynamic(links3, Logit(0.25)), [0.2, 0.3, 0.5], 5.0, 1e-3)
    assert path_cost(ode, links3, Logit(0.25)).value <= 1e-4


def test_constant_path_at_rest_point(links3):
    xs = find_rest_point(links3, Logit(0.25))
    path = SampledPath(np.linspace(0, 3, 31), np.tile(xs, (31, 1)), 0.1)
    assert path_cost(path, links3, Logit(0.25)).value <= 1e-8


def test_reverse_path_cost_matches_closed_form(pg3):
    p = Logit(0.25)
    xs = find_rest_point(pg3.game, p)
    for y in ([0.2, 0.5, 0.3], [0.6, 0.2, 0.2]):
        rev = integrate(mean_dynamic(pg3.game, p), y, 200.0, 0.01, direction="reverse", rest_point=xs)
        C = exit_cost(pg3, 0.25, np.array(y), x_star=xs)
        assert path_cost(rev, pg3.game, p).value == pytest.approx(C, rel=1e-3)


def test_refinement_order(links3):
    p = Logit(1.0)
    costs = [path_cost(smooth_path(dt), links3, p).value for dt in (0.05, 0.025, 0.0125, 0.00625)]
    diffs = np.abs(np.diff(costs))
    order = np.polyfit(np.log([0.05, 0.025, 0.0125]), np.log(diffs), 1)[0]
    assert order >= 1.5


def test_infeasible_segment_reported(links3):
    # leaves a vertex the wrong way
    path = SampledPath([0, 0.5, 1.0], [[0.5, 0.5, 0.0], [0.5, 0.5, 0.0], [0.45, 0.45, 0.1]], 0.5)
    assert path_cost(path, links3, Logit(1.0)).value < math.inf
    # faster than one switch per period
    bad = SampledPath([0, 0.25, 1.0], [[0.5, 0.5, 0.0], [0.0, 0.0, 1.0], [0.0, 0.1, 0.9]], 0.5)
    res = path_cost(bad, links3, Logit(1.0))
    assert res.value == math.inf and res.infeasible_index == 0


def test_path_cost_rejects_bad_input(links3):
    with pytest.raises(ValueError):
        path_cost(SampledPath([0.0], [[1 / 3] * 3], 1.0), links3, Logit(1.0))
    with pytest.raises(ValueError):
        path_cost(SampledPath([0.0, 1.0], [[0.3, 0.3, 0.4], [0.3, 0.3, 0.5]], 1.0), links3, Logit(1.0))


class TestSurgery:
    protocol = Logit(5.0)

    @pytest.fixture
    def varsigma(self, links3):
        return switch_floor(links3, self.protocol)

    @pytest.mark.parametrize("frac", [1.0, 0.5, 0.1, 0.02])
    def test_shift_stays_close_and_interior(self, links3, varsigma, frac):
        alpha = frac * varsigma / 4
        phi = boundary_path()
        sh = path_surgery(phi, alpha, None, links3, self.protocol, varsigma)
        assert np.all(sh.states >= 0) and np.allclose(sh.states.sum(axis=1), 1, atol=1e-12)
        late = sh.times >= alpha
        t = sh.times[late]
        dist = np.abs(sh.states[late] - phi.at(t - alpha)).sum(axis=1).max()
        assert dist <= (2 + 4 / varsigma) * alpha
        assert sh.states[late].min() >= varsigma * alpha / 4

    def test_coarsening_converges(self, links3, varsigma):
        alpha = varsigma / 8
        sh = path_surgery(curved_path(), alpha, None, links3, self.protocol, varsigma)
        grid = np.linspace(0, 1, 2001)
        sup = []
        for beta in (1 / 4, 1 / 8, 1 / 16, 1 / 32):
            co = coarsen(sh, alpha, beta)
            assert np.all(co.states[co.times >= alpha] >= varsigma * alpha / 4 - 1e-15)
            sup.append(np.abs(co.at(grid) - sh.at(grid)).max())
        assert all(a > b for a, b in zip(sup, sup[1:])) and sup[-1] <= 1e-3

    def test_alpha_out_of_range(self, links3, varsigma):
        with pytest.raises(ValueError):
            path_surgery(boundary_path(), varsigma, None, links3, self.protocol, varsigma)
        with pytest.raises(ValueError):
            path_surgery(boundary_path(), 0.0, None, links3, self.protocol, varsigma)
        with pytest.raises(ValueError):
            path_surgery(boundary_path(), varsigma / 8, 0.3, links3, self.protocol, varsigma)

    def test_default_floor_and_prefix(self, links3, varsigma):
        alpha = varsigma / 8
        sh = path_surgery(boundary_path(), alpha, None, links3, self.protocol)
        head = interior_shift(boundary_path(), alpha, links3, self.protocol, varsigma)
        assert np.allclose(sh.states, head.states)
        ode = integrate(mean_dynamic(links3, self.protocol), [0.0, 0.3, 0.7], alpha, alpha / 64)
        assert np.allclose(sh.states[: len(ode)], ode.states)

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from evoldp.dynamics import (RestPointError, StepSizeError, VectorField, det_approx_experiment, find_rest_point,
                             integrate, log_linear_fit, logit_map, mean_dynamic, mean_field, smoothed_frequency,
                             sup_deviations)
from evoldp.games import DirectGame, MatchingGame
from evoldp.protocols import ImitationMutation, Logit, PairwiseLogit, switch_floor

X25 = np.array([0.3563, 0.4482, 0.1956])
X10 = np.array([0.3648, 0.4732, 0.1620])


def test_flat_game_field():
    g = DirectGame(lambda x: np.zeros(3), 3)
    x = np.array([0.6, 0.3, 0.1])
    for p in (Logit(0.7), PairwiseLogit(0.7)):
        if isinstance(p, Logit):
            assert np.allclose(mean_field(g, p, x), 1 / 3 - x, atol=1e-15)
    assert np.allclose(find_rest_point(g, Logit(0.3)), 1 / 3, atol=1e-12)


def test_field_small_at_published_rest_point(links3):
    assert np.abs(mean_field(links3, Logit(0.25), X25)).sum() <= 5e-4


def test_two_logit_forms_agree(links3):
    x = np.random.default_rng(0).dirichlet(np.ones(3), size=200)
    a = mean_field(links3, Logit(0.3), x)
    b = logit_map(links3, 0.3, x) - x
    assert np.abs(a - b).max() <= 1e-12


def test_tangency_at_many_states(links3):
    x = np.random.default_rng(1).dirichlet(np.ones(3), size=10_000)
    for p in (Logit(0.25), PairwiseLogit(0.25), ImitationMutation(0.1, 1 / 9, 1.0)):
        assert np.abs(mean_field(links3, p, x).sum(axis=1)).max() <= 1e-12


def test_boundary_repulsion(links3):
    varsigma = switch_floor(links3, Logit(0.25))
    rng = np.random.default_rng(2)
    x = rng.dirichlet(np.ones(3), size=500)
    x[:, 0] = rng.random(500) * 1e-3
    x /= x.sum(axis=1, keepdims=True)
    v = mean_field(links3, Logit(0.25), x)
    assert np.all(v >= varsigma - x - 1e-15)


def test_rest_points(links3):
    assert np.abs(find_rest_point(links3, Logit(0.25)) - X25).max() <= 5e-4
    assert np.abs(find_rest_point(links3, Logit(0.1)) - X10).max() <= 5e-4


def test_rest_point_small_eta_converges(links3):
    x = find_rest_point(links3, Logit(0.02))
    assert np.abs(x - logit_map(links3, 0.02, x)).sum() <= 1e-12


def test_rest_point_failure_carries_iterate(links3):
    with pytest.raises(RestPointError) as info:
        find_rest_point(links3, Logit(0.25), max_iter=2)
    assert info.value.last.shape == (3,)
    with pytest.raises(TypeError):
        find_rest_point(links3, PairwiseLogit(0.25))


def test_constant_path_at_rest_point(links3):
    xs = find_rest_point(links3, Logit(0.25))
    path = integrate(mean_dynamic(links3, Logit(0.25)), xs, 10.0, 0.01)
    assert np.abs(path.states - xs).max() <= 1e-8


@given(st.lists(st.floats(0.01, 1), min_size=3, max_size=3))
def test_global_convergence(w):
    from evoldp.games import three_link_congestion_game
    g = three_link_congestion_game()
    x0 = np.array(w) / sum(w)
    path = integrate(mean_dynamic(g, Logit(0.25)), x0, 50.0, 0.05)
    assert np.abs(path.states[-1] - find_rest_point(g, Logit(0.25))).max() <= 1e-4
    assert np.all(path.states >= 0) and np.allclose(path.states.sum(axis=1), 1, atol=1e-12)


def test_rk4_order(links3):
    vf = mean_dynamic(links3, Logit(0.25))
    x0 = np.array([0.7, 0.2, 0.1])
    ends = [integrate(vf, x0, 2.0, dt).states[-1] for dt in (0.2, 0.1, 0.05)]
    e1, e2 = np.abs(ends[0] - ends[1]).sum(), np.abs(ends[1] - ends[2]).sum()
    assert np.log2(e1 / e2) >= 3.5


def test_reverse_integration(links3):
    p = Logit(0.25)
    xs = find_rest_point(links3, p)
    y = np.array([0.2, 0.5, 0.3])
    rev = integrate(mean_dynamic(links3, p), y, 200.0, 0.01, direction="reverse", rest_point=xs)
    assert rev.times[-1] == 0 and np.array_equal(rev.states[-1], y)
    assert np.abs(rev.states[0] - xs).sum() <= 1e-9
    assert rev.times[0] > -200


def test_step_size_error():
    g = MatchingGame(np.eye(2))
    vf = VectorField(lambda x: np.array([-5.0, 5.0]) + 0 * x, 2)
    with pytest.raises(StepSizeError):
        integrate(vf, [0.01, 0.99], 1.0, 0.1)
    with pytest.raises(ValueError):
        integrate(mean_dynamic(g, Logit(1)), [0.5, 0.5], 1.0, 0.1, direction="sideways")


def test_smoothing_and_fit():
    assert smoothed_frequency(0, 100) == pytest.approx(0.5 / 101)
    slope, r2 = log_linear_fit([1, 2, 3], np.exp([-1.0, -2.0, -3.0]))
    assert slope == pytest.approx(-1.0) and r2 == pytest.approx(1.0)


def test_sup_deviation_shrinks_with_n(links3):
    x0 = np.array([0.2, 0.3, 0.5])
    ode = integrate(mean_dynamic(links3, Logit(0.25)), x0, 2.0, 1e-3)
    med = [np.median(sup_deviations(links3, Logit(0.25), x0, 2.0, N, 40, 3, ode)) for N in (100, 1000, 10000)]
    assert med[0] > med[1] > med[2]


def test_exceedance_nested_in_eps(links3):
    tab = det_approx_experiment(links3, Logit(0.25), [0.2, 0.3, 0.5], 1.0, [100, 400], 50, [0.02, 0.05, 0.1],
                                seed=4)
    assert np.all(np.diff(tab.exceed, axis=1) <= 0)
    assert tab.to_csv().splitlines()[0] == "N,eps,exceed_freq,replicas"

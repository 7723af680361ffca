import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from evoldp.games import three_link_congestion_game
from evoldp.largedev.entropy import cramer_batch, cramer_transform, law_weights, log_mgf, relative_entropy
from evoldp.process import IncrementLaw, increments
from evoldp.protocols import Logit, PairwiseLogit, switch_matrix_array

GAME = three_link_congestion_game()


def sigma_at(x, protocol=Logit(0.25)):
    return switch_matrix_array(GAME, protocol, np.asarray(x, dtype=float))


def random_interior_pair(rng, spread=0.3):
    x = rng.dirichlet(2 * np.ones(3))
    sigma = sigma_at(x)
    mean = law_weights(x, sigma) @ increments(3)
    z = mean + spread * rng.normal(size=3)
    return x, z - z.mean(), sigma


def test_relative_entropy_rules():
    pi = np.array([0.2, 0.3, 0.5, 0.0])
    assert relative_entropy(pi, pi) == 0.0
    assert relative_entropy([0.5, 0.0, 0.0, 0.5], pi) == math.inf
    assert relative_entropy([0.0, 1.0, 0.0, 0.0], pi) == pytest.approx(-math.log(0.3), abs=1e-15)
    lam = IncrementLaw.from_vector(2, [0.5, 0.25, 0.25])
    assert relative_entropy(lam, lam) == 0.0


def test_log_mgf_at_zero_and_shift():
    x = np.array([0.2, 0.3, 0.5])
    s = sigma_at(x)
    H, grad = log_mgf(x, np.zeros(3), s)
    assert abs(H) <= 1e-15
    assert np.allclose(grad, law_weights(x, s) @ increments(3), atol=1e-15)
    u = np.array([0.4, -1.2, 2.0])
    assert log_mgf(x, u + 3.7, s)[0] == pytest.approx(log_mgf(x, u, s)[0], abs=1e-12)


def test_log_mgf_gradient_matches_differences():
    rng = np.random.default_rng(0)
    for _ in range(50):
        x = rng.dirichlet(np.ones(3))
        s = sigma_at(x)
        u = rng.normal(size=3) * 2
        _, g = log_mgf(x, u, s)
        fd = np.array([(log_mgf(x, u + 1e-5 * e, s)[0] - log_mgf(x, u - 1e-5 * e, s)[0]) / 2e-5 for e in np.eye(3)])
        assert np.abs(g - fd).max() <= 1e-6


def test_zero_at_mean_and_vertex_values():
    rng = np.random.default_rng(1)
    for _ in range(50):
        x = rng.dirichlet(np.ones(3))
        s = sigma_at(x)
        mean = law_weights(x, s) @ increments(3)
        assert cramer_transform(x, mean, s).value <= 1e-10
        i, j = rng.choice(3, size=2, replace=False)
        z = np.zeros(3)
        z[j], z[i] = 1.0, -1.0
        assert cramer_transform(x, z, s).value == pytest.approx(-math.log(x[i] * s[i, j]), abs=1e-9)


def test_infeasible_direction():
    x = np.array([0.0, 0.4, 0.6])
    s = sigma_at(x)
    res = cramer_transform(x, [-0.1, 0.05, 0.05], s)
    assert res.value == math.inf and res.status == "infeasible"
    assert res.certificate is not None
    # also too fast: no more than one agent switches per period
    assert cramer_transform([0.3, 0.3, 0.4], [-1.0, -1.0, 2.0], sigma_at([0.3, 0.3, 0.4])).value == math.inf
    with pytest.raises(ValueError):
        cramer_transform(x, [0.1, 0.0, 0.0], s)
    with pytest.raises(ValueError):
        cramer_transform(x, [0.1, -0.1, 0.0], s, method="other")


def test_dual_matches_primal_oracle():
    rng = np.random.default_rng(2)
    for _ in range(60):
        x, z, s = random_interior_pair(rng)
        d = cramer_transform(x, z, s)
        p = cramer_transform(x, z, s, method="primal_oracle")
        assert d.value == p.value or abs(d.value - p.value) <= 1e-6


def test_dual_matches_primal_on_faces():
    x = np.array([0.0, 0.3, 0.7])
    s = sigma_at(x)
    for z in ([0.0, 0.2, -0.2], [0.3, -0.1, -0.2], [0.0, -1.0, 1.0], [0.5, -0.5, 0.0]):
        d = cramer_transform(x, z, s)
        p = cramer_transform(x, z, s, method="primal_oracle")
        assert np.isfinite(d.value) and abs(d.value - p.value) <= 1e-6


def test_tilted_law_consistency():
    rng = np.random.default_rng(3)
    for _ in range(100):
        x, z, s = random_interior_pair(rng)
        res = cramer_transform(x, z, s)
        if not np.isfinite(res.value):
            continue
        lam = res.minimizer.vector()
        assert np.abs(lam @ increments(3) - z).max() <= 1e-8
        assert relative_entropy(lam, law_weights(x, s)) == pytest.approx(res.value, abs=1e-8)
        assert abs(res.tilt.sum()) <= 1e-9


def test_convex_and_nonnegative():
    rng = np.random.default_rng(4)
    pairs = 1000
    x = rng.dirichlet(np.ones(3), size=pairs)
    w = law_weights(x, switch_matrix_array(GAME, PairwiseLogit(0.5), x))
    z1 = rng.normal(size=(pairs, 3)) * 0.3
    z2 = rng.normal(size=(pairs, 3)) * 0.3
    z1 -= z1.mean(axis=1, keepdims=True)
    z2 -= z2.mean(axis=1, keepdims=True)
    a = cramer_batch(w, z1)[0]
    b = cramer_batch(w, z2)[0]
    m = cramer_batch(w, (z1 + z2) / 2)[0]
    assert np.all(a >= 0) and np.all(b >= 0)
    both = np.isfinite(a) & np.isfinite(b)
    assert both.sum() > 100
    assert np.all(m[both] <= (a[both] + b[both]) / 2 + 1e-8)


@given(st.floats(0.05, 0.9), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_nonnegative_property(x1, z1, z2):
    x = np.array([x1, (1 - x1) * 0.4, (1 - x1) * 0.6])
    z = np.array([z1, z2, -z1 - z2])
    assert cramer_transform(x, z, sigma_at(x)).value >= 0


def test_batch_matches_single():
    rng = np.random.default_rng(5)
    zs, ws, single = [], [], []
    for _ in range(20):
        x, z, s = random_interior_pair(rng)
        ws.append(law_weights(x, s))
        zs.append(z)
        single.append(cramer_transform(x, z, s).value)
    vals = cramer_batch(np.array(ws), np.array(zs))[0]
    assert np.allclose(vals, single, rtol=0, atol=1e-12)


class TestContinuity:
    x = np.array([0.0, 0.5, 0.5])
    t = 0.3
    protocol = Logit(1.0)

    def L(self, x, z):
        x = np.asarray(x, dtype=float)
        return cramer_transform(x, z, switch_matrix_array(GAME, self.protocol, x)).value

    def z(self, alpha):
        return self.t * np.array([-alpha, -(1 - alpha), 1.0])

    def test_same_face_sequence(self):
        base = self.L(self.x, self.z(0.0))
        gaps = [abs(self.L([0.0, 0.5 + e, 0.5 - e], self.z(0.0)) - base) for e in 10.0 ** -np.arange(2, 8)]
        assert all(a >= b for a, b in zip(gaps, gaps[1:])) and gaps[-1] <= 1e-6  # Lipschitz in the state along the face

    def test_interior_sequence_with_fixed_direction(self):
        base = self.L(self.x, self.z(0.0))
        gaps = [abs(self.L([e, 0.5 - e / 2, 0.5 - e / 2], self.z(0.0)) - base) for e in 10.0 ** -np.arange(4, 20, 3)]
        assert gaps[-1] <= 1e-7 and gaps[-1] < gaps[0]

    def test_direction_moving_with_state_breaks_continuity(self):
        base = self.L(self.x, self.z(0.0))
        jumps = []
        for k in range(4, 20, 3):
            e = 10.0**-k
            alpha = 3 / math.log(1 / e)
            jumps.append(self.L([e, 0.5 - e / 2, 0.5 - e / 2], self.z(alpha)) - base)
        # (x_k, z_k) converges to (x, z) yet the cost stays bounded away from L(x, z)
        assert min(jumps) >= 0.5


def test_skewed_law_with_fast_target():
    # a law with two nearly empty atoms and a target close to the edge of the feasible set
    w = np.array([2.44323763e-01, 6.00432574e-01, 1.03254053e-02, 2.20074835e-06, 4.15982218e-03,
                  1.28056660e-06, 1.40754954e-01])
    w /= w.sum()
    z = np.array([0.61074937, -0.73700631, 0.12625695])
    z -= z.mean()
    val = cramer_batch(w[None], z[None])[0][0]
    from evoldp.largedev.entropy import primal_entropy_min
    assert val == pytest.approx(primal_entropy_min(w, z)[0], abs=1e-6)


def test_targets_near_feasible_edge():
    rng = np.random.default_rng(6)
    B = 400
    x = rng.dirichlet(0.5 * np.ones(3), size=B)
    w = law_weights(x, switch_matrix_array(GAME, Logit(0.25), x))
    # convex combinations of increments, pushed toward the boundary of their hull
    lam = rng.dirichlet(0.2 * np.ones(7), size=B)
    z = lam @ increments(3)
    vals = cramer_batch(w, z)[0]
    from evoldp.largedev.entropy import primal_entropy_min
    assert np.all(vals >= 0)
    for b in range(0, B, 10):
        ref = primal_entropy_min(w[b], z[b])[0]
        assert vals[b] == ref or abs(vals[b] - ref) <= 1e-6 * max(1.0, ref)

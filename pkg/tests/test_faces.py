import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from evoldp.largedev.faces import face_project, projection_residuals
from evoldp.process import IncrementLaw
from evoldp.verify import random_face_instance


def check_instance(lam, I, tol=1e-12):
    bar, chi = face_project(lam, I)
    r = projection_residuals(lam, bar, chi, I)
    # the conditions, written out from the raw arrays rather than trusted from the helper
    K = [k for k in range(lam.n) if k not in I]
    d = bar.off - lam.off
    mass_K = lam.off[K].sum()
    assert np.all(chi >= -tol)
    assert np.abs(d.sum(axis=1)[I] + chi).max(initial=0) <= tol
    assert np.abs(d.sum(axis=0)[I] + chi).max(initial=0) <= tol
    assert abs(bar.null - lam.null - mass_K - chi.sum()) <= tol
    assert chi.sum() <= mass_K + tol
    assert np.abs(d).sum() <= 3 * mass_K + tol
    assert np.abs(bar.mean() - lam.mean()).max() <= tol
    assert np.all(bar.off >= 0) and bar.off[K].sum() == 0
    assert abs(bar.off.sum() + bar.null - 1) <= tol
    assert max(r["rows"], r["cols"], r["null"], r["mean"], r["outside_rows"]) <= tol
    assert r["chi_excess"] <= tol and r["variation_excess"] <= tol


def test_random_instances():
    rng = np.random.default_rng(11)
    for _ in range(10_000):
        lam, I = random_face_instance(rng, int(rng.integers(2, 6)))
        check_instance(lam, list(I))


@given(st.integers(0, 2**32 - 1), st.integers(2, 7))
def test_random_instances_property(seed, n):
    lam, I = random_face_instance(np.random.default_rng(seed), n)
    check_instance(lam, list(I))


def test_supported_law_unchanged():
    off = np.array([[0, 0.1, 0.2], [0.05, 0, 0.15], [0, 0, 0]])
    lam = IncrementLaw(off, 0.5)
    bar, chi = face_project(lam, [0, 1])
    assert np.array_equal(bar.off, lam.off) and bar.null == lam.null
    assert np.array_equal(chi, np.zeros(2))


def test_cycle_through_outside_action():
    # 0 -> 2 -> 0 round trip collapses to the null move and is counted in chi
    off = np.zeros((3, 3))
    off[0, 2] = off[2, 0] = 0.2
    bar, chi = face_project(IncrementLaw(off, 0.6), [0, 1])
    assert bar.null == pytest.approx(1.0) and np.allclose(chi, [0.2, 0.0])


def test_infeasible_mean_rejected():
    off = np.zeros((3, 3))
    off[0, 1] = 1.0
    with pytest.raises(ValueError):
        face_project(IncrementLaw(off, 0.0), [1, 2])

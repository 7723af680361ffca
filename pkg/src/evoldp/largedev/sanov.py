"""Exact tail probabilities of empirical means of i.i.d. increments, by enumerating
empirical distributions, against the Cramer rate inf_{z in V} L(x, z)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, minimize
from scipy.special import gammaln, logsumexp

from ..process import increments
from ..simplex import as_simplex_point, enumerate_grid
from .entropy import cramer_transform, law_weights

MAX_N = 40
MAX_COMPOSITIONS = 2_000_000


@dataclass(frozen=True)
class HalfSpace:
    """V = {z : <w, z> >= level}."""

    w: np.ndarray
    level: float

    def contains(self, z, tol=1e-12):
        return np.asarray(z) @ np.asarray(self.w, dtype=float) >= self.level - tol


@dataclass(frozen=True)
class Ball:
    """V = {z : |z - center|_2 <= radius}."""

    center: np.ndarray
    radius: float

    def contains(self, z, tol=1e-12):
        return np.linalg.norm(np.asarray(z) - np.asarray(self.center), axis=-1) <= self.radius + tol


def exact_log_probability(w: np.ndarray, V, N: int, n: int, max_compositions: int = MAX_COMPOSITIONS) -> float:
    """log P(mean of N i.i.d. increments ~ w lies in V), by multinomial enumeration."""
    if N > MAX_N:
        raise ValueError(f"enumeration capped at N <= {MAX_N}")
    keep = np.flatnonzero(w > 0)
    m = keep.size
    if math.comb(N + m - 1, m - 1) > max_compositions:
        raise ValueError("too many empirical distributions to enumerate")
    counts = enumerate_grid(m, N)
    means = counts @ increments(n)[keep] / N
    inside = V.contains(means)
    if not inside.any():
        return -math.inf
    c = counts[inside]
    logp = gammaln(N + 1) - gammaln(c + 1).sum(axis=1) + c @ np.log(w[keep])
    return float(logsumexp(logp))


def min_rate(x, sigma, V) -> tuple[float, np.ndarray | None]:
    """inf over V of L(x, .) and a minimizing displacement."""
    x = as_simplex_point(x, tol=1e-9)
    n = x.size
    w = law_weights(x, sigma)
    A = increments(n)
    keep = w > 0
    mean = w @ A
    if V.contains(mean):
        return 0.0, mean
    if isinstance(V, HalfSpace):
        wv = np.asarray(V.w, dtype=float)
        proj = A[keep] @ wv
        top = proj.max()
        if V.level > top + 1e-12:
            return math.inf, None
        if V.level >= top - 1e-12:
            hit = np.isclose(A @ wv, top) & keep
            return -math.log(w[hit].sum()), (w[hit] @ A[hit]) / w[hit].sum()
        # one-dimensional dual: sup_s s*level - log E exp(s <w, zeta>)
        def tilted_mean(s):
            a = np.log(w[keep]) + s * proj
            p = np.exp(a - logsumexp(a))
            return p @ proj - V.level
        hi = 1.0
        while tilted_mean(hi) < 0:
            hi *= 2
        s = brentq(tilted_mean, 0.0, hi, xtol=1e-14)
        a = np.log(w[keep]) + s * proj
        value = s * V.level - logsumexp(a)
        p = np.exp(a - logsumexp(a))
        return float(value), p @ A[keep]
    if isinstance(V, Ball):
        c = np.asarray(V.center, dtype=float)
        r = V.radius

        def f(z):
            res = cramer_transform(x, z - z.mean(), sigma)
            if not np.isfinite(res.value):
                return 1e6, np.zeros(n)
            return res.value, res.tilt

        start = c + r * (mean - c) / np.linalg.norm(mean - c)
        cons = [{"type": "eq", "fun": lambda z: z.sum(), "jac": lambda z: np.ones(n)},
                {"type": "ineq", "fun": lambda z: r**2 - np.sum((z - c) ** 2), "jac": lambda z: -2 * (z - c)}]
        res = minimize(f, start, jac=True, constraints=cons, method="SLSQP", options={"ftol": 1e-12, "maxiter": 200})
        return float(res.fun), res.x
    raise TypeError(f"unsupported target set {type(V).__name__}")


@dataclass
class SanovRow:
    N: int
    log_prob: float
    rate: float           # -(1/N) log P
    inf_L: float
    gap: float


def sanov_check(x, sigma, N_list, V, max_compositions: int = MAX_COMPOSITIONS) -> list[SanovRow]:
    """Compare -(1/N) log P(mean increment in V) with inf_{z in V} L(x, z)."""
    x = as_simplex_point(x, tol=1e-9)
    w = law_weights(x, sigma)
    target, _ = min_rate(x, sigma, V)
    rows = []
    for N in N_list:
        lp = exact_log_probability(w, V, int(N), x.size, max_compositions)
        rate = -lp / N if np.isfinite(lp) else math.inf
        gap = abs(rate - target) if np.isfinite(target) and np.isfinite(rate) else (0.0 if rate == target else math.inf)
        rows.append(SanovRow(int(N), lp, rate, target, gap))
    return rows

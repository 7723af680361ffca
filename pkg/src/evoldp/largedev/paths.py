"""Path costs and the interior-shift / coarsening operations on paths."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..dynamics import integrate, mean_dynamic
from ..process import SampledPath, increment_weights
from ..protocols import switch_floor, switch_matrix_array
from .entropy import cramer_batch

TANGENT_TOL = 1e-8


@dataclass
class PathCost:
    value: float
    segments: np.ndarray            # per-segment L * dt
    infeasible_index: int | None    # first segment with L = +inf
    status: np.ndarray


def path_cost(path: SampledPath, game, protocol) -> PathCost:
    """Integral of L(phi_t, dphi_t/dt) along a sampled path.

    Each sample interval contributes L(m, v) * dt with v the forward difference
    over the interval and m the interval midpoint (midpoint quadrature).
    """
    if len(path) < 2:
        raise ValueError("path cost needs at least two samples")
    dt = np.diff(path.times)
    v = np.diff(path.states, axis=0) / dt[:, None]
    drift = np.abs(v.sum(axis=1)).max()
    if drift > TANGENT_TOL:
        raise ValueError(f"path velocities are not tangent to the simplex (sum {drift:.2e})")
    v -= v.mean(axis=1, keepdims=True)
    mid = 0.5 * (path.states[1:] + path.states[:-1])
    w = increment_weights(mid, switch_matrix_array(game, protocol, mid))
    vals, _, _, status, _ = cramer_batch(w, v)
    seg = vals * dt
    bad = np.flatnonzero(~np.isfinite(seg))
    if bad.size:
        return PathCost(math.inf, seg, int(bad[0]), status)
    return PathCost(math.fsum(seg), seg, None, status)


def interior_shift(path: SampledPath, alpha: float, game, protocol, varsigma: float,
                   prefix_steps: int = 64) -> SampledPath:
    """phi^alpha: the mean dynamic from phi_0 up to time alpha, then the increments
    of phi scaled by (1 - 2 alpha / varsigma). Defined on [0, 1]."""
    x = path.states[0]
    shrink = 1.0 - 2.0 * alpha / varsigma
    head = integrate(mean_dynamic(game, protocol), x, alpha, alpha / prefix_steps)
    anchor = head.states[-1]
    s = path.times[(path.times > 0) & (path.times < 1 - alpha)]
    s = np.concatenate([s, [1 - alpha]])
    tail = anchor + shrink * (path.at(s) - x)
    tail = np.atleast_2d(tail)
    times = np.concatenate([head.times, alpha + s])
    states = np.vstack([head.states, tail])
    return SampledPath(times, states, head.step, meta={"alpha": alpha, "varsigma": varsigma})


def coarsen(shifted: SampledPath, alpha: float, beta: float) -> SampledPath:
    """phi^beta: equal to phi^alpha on [0, alpha], then affine between the knots alpha + k beta (and 1)."""
    inv = 1.0 / beta
    if abs(inv - round(inv)) > 1e-9:
        raise ValueError("1/beta must be an integer")
    head = shifted.times <= alpha + 1e-15
    knots = [alpha + k * beta for k in range(1, int(round(inv)) + 1) if alpha + k * beta <= 1 + 1e-12]
    if not knots or knots[-1] < 1 - 1e-12:
        knots.append(1.0)
    knots = np.array(knots)
    times = np.concatenate([shifted.times[head], knots])
    states = np.vstack([shifted.states[head], np.atleast_2d(shifted.at(knots))])
    return SampledPath(times, states, beta, meta={"alpha": alpha, "beta": beta})


def path_surgery(path: SampledPath, alpha: float, beta: float | None, game, protocol,
                 varsigma: float | None = None) -> SampledPath:
    """Interior shift phi^alpha of a path on [0, 1], coarsened to step beta when given.

    ``varsigma`` is the lower bound on switch probabilities; by default it is the
    mesh scan of :func:`evoldp.protocols.switch_floor`. Requires 0 < alpha <= varsigma/4.
    """
    if abs(path.times[0]) > 1e-12 or abs(path.times[-1] - 1) > 1e-12:
        raise ValueError("path surgery acts on paths indexed by [0, 1]")
    if varsigma is None:
        varsigma = switch_floor(game, protocol)
    if not 0 < alpha <= varsigma / 4:
        raise ValueError(f"alpha must lie in (0, varsigma/4] = (0, {varsigma / 4:.3g}]")
    shifted = interior_shift(path, alpha, game, protocol, varsigma)
    return shifted if beta is None else coarsen(shifted, alpha, beta)

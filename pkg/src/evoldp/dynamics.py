"""Mean dynamic of the evolutionary process: vector fields, RK4 integration on
the simplex, logit rest points and deterministic-approximation experiments."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .games import SIMPLE, GameSpec
from .process import BatchChain, SampledPath
from .protocols import Logit, ProtocolSpec, logit_choice, switch_matrix_array
from .simplex import GridState, as_simplex_point

DRIFT_TOL = 1e-8


class StepSizeError(RuntimeError):
    """An integration step drifted off the simplex by more than the tolerance."""


class RestPointError(RuntimeError):
    """Fixed-point iteration did not converge; ``last`` holds the final iterate."""

    def __init__(self, msg, last):
        super().__init__(msg)
        self.last = last


@dataclass(frozen=True)
class VectorField:
    """Tangent vector field on X; ``fn`` maps states (..., n) to velocities (..., n)."""

    fn: Callable
    n: int
    tag: str = ""
    rest_point: np.ndarray | None = field(default=None, compare=False)

    def __call__(self, x):
        return self.fn(np.asarray(x, dtype=float))


def mean_field(game: GameSpec, protocol: ProtocolSpec, x) -> np.ndarray:
    """Expected motion sum_j x_j sigma_ji(x) - x_i, batched over leading axes."""
    x = np.asarray(x, dtype=float)
    sigma = switch_matrix_array(game, protocol, x)
    return np.einsum("...j,...ji->...i", x, sigma) - x


def logit_map(game: GameSpec, eta: float, x) -> np.ndarray:
    """M^eta(F(x)), the logit choice at the limiting payoffs."""
    return logit_choice(game.payoff(np.asarray(x, dtype=float)), eta)


def mean_dynamic(game: GameSpec, protocol: ProtocolSpec) -> VectorField:
    if isinstance(protocol, Logit):
        eta = protocol.eta
        fn = lambda x: logit_map(game, eta, x) - x  # noqa: E731
        return VectorField(fn, game.n, f"logit(eta={eta})")
    return VectorField(lambda x: mean_field(game, protocol, x), game.n, f"mean dynamic {protocol.to_dict()}")


def _rk4_step(f, x, h):
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    return x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _renormalize(x):
    s = x.sum(axis=-1, keepdims=True)
    if np.max(np.abs(s - 1)) > DRIFT_TOL or np.min(x) < -DRIFT_TOL:
        raise StepSizeError(f"step left the simplex (sum drift {np.max(np.abs(s - 1)):.2e}, "
                            f"min coordinate {np.min(x):.2e}); reduce dt")
    x = np.maximum(x, 0.0)
    return x / x.sum(axis=-1, keepdims=True)


def integrate(vf: VectorField, x0, T: float, dt: float, direction: str = "forward",
              rest_point=None, halt_tol: float = 1e-9) -> SampledPath:
    """Fixed-step RK4 solution, renormalized onto X after every step.

    ``forward``: path on [0, T] from x0. ``reverse``: path psi on [-T, 0] with
    psi_0 = x0 and d/dt psi = -v(psi); it is obtained by running v backward from
    time 0 and stops early once within ``halt_tol`` (l1) of ``rest_point``.
    """
    if dt <= 0 or T <= 0:
        raise ValueError("T and dt must be positive")
    x = as_simplex_point(x0, tol=1e-9).copy()
    steps = math.ceil(T / dt - 1e-9)
    h = T / steps
    rest = rest_point if rest_point is not None else vf.rest_point
    out = [x]
    for _ in range(steps):
        x = _renormalize(_rk4_step(vf, x, h))
        out.append(x)
        if direction == "reverse" and rest is not None and np.abs(x - rest).sum() <= halt_tol:
            break
    states = np.array(out)
    times = np.arange(len(out)) * h
    if direction == "forward":
        return SampledPath(times, states, h, meta={"tag": vf.tag, "direction": "forward"})
    if direction == "reverse":
        return SampledPath(times[::-1] * -1.0, states[::-1], h, meta={"tag": vf.tag, "direction": "reverse"})
    raise ValueError(f"direction must be 'forward' or 'reverse', got {direction!r}")


def find_rest_point(game: GameSpec, protocol: Logit, x_init=None, tol: float = 1e-12,
                    omega: float = 0.5, max_iter: int = 200_000) -> np.ndarray:
    """Rest point x = M^eta(F(x)) of the logit dynamic by damped fixed-point iteration.

    The damping factor is halved whenever the residual |x - M(F(x))|_1 grows,
    which breaks the period-two cycles plain iteration falls into at small eta.
    """
    if not isinstance(protocol, Logit):
        raise TypeError("rest-point iteration is defined for the logit protocol")
    x = np.full(game.n, 1.0 / game.n) if x_init is None else as_simplex_point(x_init, tol=1e-9).copy()
    eta = protocol.eta
    y = logit_map(game, eta, x)
    res = np.abs(x - y).sum()
    for _ in range(max_iter):
        if res <= tol:
            return x
        cand = (1 - omega) * x + omega * y
        y_c = logit_map(game, eta, cand)
        res_c = np.abs(cand - y_c).sum()
        if res_c > res and omega > 1e-8:
            omega *= 0.5
            continue
        x, y, res = cand, y_c, res_c
    raise RestPointError(f"no convergence after {max_iter} iterations (residual {res:.3e})", x)


# -- deterministic approximation -------------------------------------------------------

@dataclass
class DetApproxTable:
    N_list: list
    eps_list: list
    replicas: int
    exceed: np.ndarray        # (len(N_list), len(eps_list)) exceedance frequencies
    sup_dev: np.ndarray       # (len(N_list), replicas) sup deviations
    decay: dict               # eps -> (slope, r2) of log-frequency against N
    seed: int

    def to_csv(self) -> str:
        lines = ["N,eps,exceed_freq,replicas"]
        for a, N in enumerate(self.N_list):
            for b, eps in enumerate(self.eps_list):
                lines.append(f"{N},{eps},{self.exceed[a, b]:.6g},{self.replicas}")
        return "\n".join(lines) + "\n"


def smoothed_frequency(count: int, total: int) -> float:
    """(count + 1/2) / (total + 1): keeps the log finite when no event occurs."""
    return (count + 0.5) / (total + 1.0)


def log_linear_fit(xs, freqs):
    """Least-squares slope and R^2 of log(freqs) against xs."""
    xs = np.asarray(xs, dtype=float)
    ys = np.log(np.asarray(freqs, dtype=float))
    A = np.column_stack([xs, np.ones_like(xs)])
    coef, *_ = np.linalg.lstsq(A, ys, rcond=None)
    pred = A @ coef
    ss_tot = np.sum((ys - ys.mean()) ** 2)
    r2 = 1.0 - np.sum((ys - pred) ** 2) / ss_tot if ss_tot > 0 else 1.0
    return float(coef[0]), float(r2)


def sup_deviations(game: GameSpec, protocol, x0, T: float, N: int, replicas: int, seed: int,
                   ode: SampledPath, mode: str = SIMPLE) -> np.ndarray:
    """sup_{t <= T} |X^N_t - x_t|_1 per replica, checked at the chain's step times."""
    start = GridState.from_shares(x0, N)
    chain = BatchChain(game, protocol, np.tile(start.counts, (replicas, 1)), N, seed, mode=mode)
    steps = math.ceil(N * T - 1e-9)
    ref = ode.at(np.arange(steps + 1) / N)
    sup = np.abs(chain.x - ref[0]).sum(axis=1)
    for k in range(steps):
        chain.step()
        sup = np.maximum(sup, np.abs(chain.x - ref[k + 1]).sum(axis=1))
    return sup


def det_approx_experiment(game: GameSpec, protocol, x0, T: float, N_list, replicas: int, eps_list,
                          seed: int, dt: float = 1e-3, mode: str = SIMPLE) -> DetApproxTable:
    """Frequency of sup-deviation >= eps between the chain and the mean dynamic.

    The chain starts from the grid rounding of x0 while the ODE starts at x0.
    Decay rates are fitted on smoothed frequencies (see :func:`smoothed_frequency`).
    """
    ode = integrate(mean_dynamic(game, protocol), x0, T, dt)
    N_list, eps_list = list(N_list), list(eps_list)
    devs = np.array([sup_deviations(game, protocol, x0, T, N, replicas, seed + a, ode, mode)
                     for a, N in enumerate(N_list)])
    exceed = np.array([[np.mean(devs[a] >= eps) for eps in eps_list] for a in range(len(N_list))])
    decay = {}
    for b, eps in enumerate(eps_list):
        freqs = [smoothed_frequency(int(round(exceed[a, b] * replicas)), replicas) for a in range(len(N_list))]
        decay[eps] = log_linear_fit(N_list, freqs)
    return DetApproxTable(N_list, eps_list, replicas, exceed, devs, decay, seed)

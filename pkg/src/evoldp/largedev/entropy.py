"""Relative entropy, the log moment generating function H and the Cramer transform L.

Increment laws are stored as mass vectors over the atoms of :func:`evoldp.process.increments`
(null move first, then e_j - e_i in row-major order).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import linprog
from scipy.special import logsumexp

from ..process import IncrementLaw, increment_weights, increments, offdiag_pairs
from ..protocols import SwitchMatrix
from ..simplex import as_simplex_point

TANGENT_TOL = 1e-10
FACE_TOL = 1e-12
GRAD_TOL = 1e-10
DIVERGED_NORM = 1e3


def _masses(law) -> np.ndarray:
    return law.vector() if isinstance(law, IncrementLaw) else np.asarray(law, dtype=float)


def relative_entropy(lam, pi) -> float:
    """R(lam || pi) = sum lam log(lam/pi) with 0 log 0 = 0; +inf when lam is not dominated by pi."""
    lam, pi = _masses(lam), _masses(pi)
    pos = lam > 0
    if np.any(pi[pos] <= 0):
        return math.inf
    return float(math.fsum(lam[pos] * np.log(lam[pos] / pi[pos])))


def as_tangent(z, tol: float = TANGENT_TOL) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if abs(z.sum()) > tol:
        raise ValueError(f"displacement must sum to zero (got {z.sum():.3e})")
    return z


def _sigma_entries(sigma) -> np.ndarray:
    return sigma.entries if isinstance(sigma, SwitchMatrix) else np.asarray(sigma, dtype=float)


def law_weights(x, sigma) -> np.ndarray:
    """nu(.|x) as a mass vector; batched over leading axes of x and sigma."""
    return increment_weights(x, _sigma_entries(sigma))


def log_mgf(x, u, sigma):
    """H(x, u) = log sum_z exp(<u, z>) nu(z|x) and its gradient in u (the tilted mean)."""
    x = as_simplex_point(x, tol=1e-9)
    w = law_weights(x, sigma)
    A = increments(x.size)
    with np.errstate(divide="ignore"):
        s = np.log(w) + A @ np.asarray(u, dtype=float)
    H = float(logsumexp(s))
    p = np.exp(s - H)
    return H, p @ A


@dataclass
class CramerResult:
    value: float
    tilt: np.ndarray | None          # maximizing u in R^n_0 (finite cases)
    minimizer: IncrementLaw | None   # tilted law lambda*
    method: str
    status: str                      # interior | face | infeasible
    iterations: int = 0
    residual: float = 0.0            # |mean(lambda*) - z|_inf
    certificate: np.ndarray | None = None   # separating direction when infeasible
    max_tilt: float = 0.0


# -- feasibility and faces ---------------------------------------------------------------

def _face_mask_closed_form(w: np.ndarray, z: np.ndarray, n: int):
    """Face of Z(x) holding z, when nu charges every atom e_j - e_i with x_i > 0 and the null move.

    Returns (feasible, mask, certificate) for one point.
    """
    i_idx, j_idx = offdiag_pairs(n)
    present = np.zeros(n, dtype=bool)
    present[i_idx[w[1:] > 0]] = True
    mask = w > 0
    if z[~present].min(initial=0.0) < -FACE_TOL:
        k = int(np.argmin(np.where(present, np.inf, z)))
        cert = -np.eye(n)[k]
        return False, mask, cert - cert.mean()
    pos = np.clip(z, 0, None).sum()
    if pos > 1 + FACE_TOL:
        cert = np.sign(z)
        return False, mask, cert - cert.mean()
    # moves into an unused action k are excluded when z_k = 0
    closed = (~present) & (z <= FACE_TOL)
    mask[1:] &= ~closed[j_idx]
    if pos >= 1 - FACE_TOL:
        # all mass must move from a losing action to a gaining one
        mask[0] = False
        mask[1:] &= (z[i_idx] < -FACE_TOL) & (z[j_idx] > FACE_TOL)
    return True, mask, None


def _support_is_maximal(w: np.ndarray, n: int) -> bool:
    i_idx, _ = offdiag_pairs(n)
    if w[0] <= 0:
        return False
    rows = w[1:].reshape(n, n - 1)
    used = rows > 0
    return bool(np.all(used.all(axis=1) | (~used).all(axis=1)))


def _face_mask_lp(w: np.ndarray, z: np.ndarray, n: int):
    """Face of conv(supp nu) holding z, by linear programming."""
    A = increments(n)
    keep = np.flatnonzero(w > 0)
    Ak = A[keep]
    m = keep.size
    A_eq = np.vstack([Ak.T, np.ones(m)])
    b_eq = np.concatenate([z, [1.0]])
    mask = np.zeros(w.size, dtype=bool)
    probe = linprog(np.zeros(m), A_eq=A_eq, b_eq=b_eq, bounds=[(0, None)] * m, method="highs")
    if probe.status != 0:
        # separating direction: max <u, z> - t  s.t. <u, a> <= t, |u| <= 1
        c = np.concatenate([-z, [1.0]])
        A_ub = np.column_stack([Ak, -np.ones(m)])
        sep = linprog(c, A_ub=A_ub, b_ub=np.zeros(m), bounds=[(-1, 1)] * n + [(None, None)], method="highs")
        u = sep.x[:n]
        return False, mask, u - u.mean()
    for a in range(m):
        c = np.zeros(m)
        c[a] = -1.0
        res = linprog(c, A_eq=A_eq, b_eq=b_eq, bounds=[(0, None)] * m, method="highs")
        if res.status == 0 and -res.fun > 1e-11:
            mask[keep[a]] = True
    return True, mask, None


def face_masks(w: np.ndarray, z: np.ndarray):
    """Per-point feasibility, face mask and certificate for batched (w, z)."""
    B, m = w.shape
    n = z.shape[1]
    feasible = np.ones(B, dtype=bool)
    masks = np.zeros((B, m), dtype=bool)
    certs = {}
    for b in range(B):
        if _support_is_maximal(w[b], n):
            ok, mk, cert = _face_mask_closed_form(w[b], z[b], n)
        else:
            ok, mk, cert = _face_mask_lp(w[b], z[b], n)
        feasible[b], masks[b] = ok, mk
        if cert is not None:
            certs[b] = cert
    return feasible, masks, certs


# -- dual Newton ---------------------------------------------------------------------------

def _tilt_stats(logw, A, u):
    s = logw + u @ A.T
    H = logsumexp(s, axis=1)
    p = np.exp(s - H[:, None])
    mean = p @ A
    return H, p, mean


def dual_newton(w: np.ndarray, z: np.ndarray, max_iter: int = 200, tol: float = GRAD_TOL):
    """Maximize <u, z> - H(u) over u in R^n_0 for a batch of laws ``w`` (B, m) and targets z (B, n).

    Returns (value, u, p, iterations, grad_norm). Atoms with zero weight are ignored,
    so restricting ``w`` to a face computes L on that face.
    """
    B, n = z.shape
    A = increments(n)
    with np.errstate(divide="ignore"):
        logw = np.log(w)
    u = np.zeros((B, n))
    J = np.full((n, n), 1.0 / n)
    P = np.eye(n) - J
    H, p, mean = _tilt_stats(logw, A, u)
    val = np.einsum("bi,bi->b", u, z) - H
    grad = z - mean
    iters = np.zeros(B, dtype=int)
    active = np.abs(grad).max(axis=1) > tol
    for it in range(max_iter):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        pa = p[idx]
        cov = np.einsum("bm,mi,mj->bij", pa, A, A) - np.einsum("bi,bj->bij", mean[idx], mean[idx])
        evals, evecs = np.linalg.eigh(cov + J + 1e-12 * P)
        cutoff = 1e-13 * evals[:, -1:]
        inv = np.where(evals > cutoff, 1.0 / np.where(evals > cutoff, evals, 1.0), 0.0)
        g = grad[idx]
        d = np.einsum("bij,bj,bkj,bk->bi", evecs, inv, evecs, g)
        d -= d.mean(axis=1, keepdims=True)
        slope = np.einsum("bi,bi->b", g, d)
        t = np.ones(idx.size)
        accepted = np.zeros(idx.size, dtype=bool)
        u_new = u[idx].copy()
        gn = np.abs(g).max(axis=1)
        for _ in range(60):
            trial = u[idx] + t[:, None] * d
            Ht, _, mt = _tilt_stats(logw[idx], A, trial)
            vt = np.einsum("bi,bi->b", trial, z[idx]) - Ht
            # near the optimum the value test is at roundoff; a halved gradient also counts,
            # provided the value has not dropped beyond that roundoff
            better = (np.abs(z[idx] - mt).max(axis=1) <= 0.5 * gn) & (vt >= val[idx] - 1e-12 * (1 + np.abs(val[idx])))
            ok = (~accepted) & ((vt >= val[idx] + 1e-4 * t * slope) | better)
            u_new[ok] = trial[ok]
            accepted |= ok
            if accepted.all():
                break
            t = np.where(accepted, t, 0.5 * t)
        # points where no step improves have reached working precision
        stalled = ~accepted
        u[idx] = u_new
        H_i, p_i, mean_i = _tilt_stats(logw[idx], A, u[idx])
        H[idx], p[idx], mean[idx] = H_i, p_i, mean_i
        val[idx] = np.einsum("bi,bi->b", u[idx], z[idx]) - H_i
        grad[idx] = z[idx] - mean_i
        iters[idx] += 1
        gnew = np.abs(grad[idx]).max(axis=1)
        done = (gnew <= tol) | stalled | ((gnew > 0.5 * gn) & (gnew <= 1e3 * tol))
        active[idx[done]] = False
    return val, u, p, iters, np.abs(grad).max(axis=1)


def cramer_batch(w, z):
    """Cramer transform for batched laws ``w`` (B, m) and displacements ``z`` (B, n).

    Returns (values, u, p, status, info). Infeasible points get +inf.
    """
    w = np.atleast_2d(np.asarray(w, dtype=float))
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if np.max(np.abs(z.sum(axis=1)), initial=0.0) > TANGENT_TOL:
        raise ValueError("displacements must sum to zero")
    feasible, masks, certs = face_masks(w, z)
    values = np.full(w.shape[0], np.inf)
    u = np.full(z.shape, np.nan)
    p = np.zeros(w.shape)
    iters = np.zeros(w.shape[0], dtype=int)
    gnorm = np.full(w.shape[0], np.nan)
    idx = np.flatnonzero(feasible)
    if idx.size:
        wr = np.where(masks[idx], w[idx], 0.0)
        v, ui, pi, it, gn = dual_newton(wr, z[idx])
        values[idx], u[idx], p[idx], iters[idx], gnorm[idx] = v, ui, pi, it, gn
    face = feasible & np.any(masks != (w > 0), axis=1)
    status = np.where(~feasible, "infeasible", np.where(face, "face", "interior"))
    return values, u, p, status, {"iterations": iters, "grad_norm": gnorm, "certificates": certs}


# -- primal oracle -------------------------------------------------------------------------

def primal_entropy_min(w: np.ndarray, z: np.ndarray, max_iter: int = 500, tol: float = 1e-13):
    """min R(lam || w) over laws lam with mean z, by Newton steps inside the affine feasible set.

    Independent of the dual route: starts from a max-min interior point found by
    linear programming and never touches the log-mgf.
    """
    n = z.size
    A = increments(n)
    keep = np.flatnonzero(w > 0)
    Ak, wk = A[keep], w[keep]
    m = keep.size
    C = np.vstack([Ak.T, np.ones(m)])
    d = np.concatenate([z, [1.0]])
    # maximize s subject to lam_a >= s, C lam = d
    c = np.zeros(m + 1)
    c[-1] = -1.0
    A_ub = np.column_stack([-np.eye(m), np.ones(m)])
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(m), A_eq=np.column_stack([C, np.zeros(C.shape[0])]),
                  b_eq=d, bounds=[(0, None)] * m + [(None, None)], method="highs")
    if res.status != 0:
        return math.inf, None
    lam = res.x[:m]
    if res.x[-1] <= 1e-12:
        # z on a face: keep atoms that can carry mass, recompute an interior point there
        _, mask, _ = _face_mask_lp(w, z, n)
        w_face = np.where(mask, w, 0.0)
        return primal_entropy_min(w_face, z, max_iter, tol)
    Nb = null_space(C)
    if Nb.shape[1] == 0:
        full = np.zeros(w.size)
        full[keep] = lam
        return float(np.sum(lam * np.log(lam / wk))), full

    def obj(l):
        return float(np.sum(l * np.log(l / wk)))

    f = obj(lam)
    for _ in range(max_iter):
        g = np.log(lam / wk) + 1.0
        rg = Nb.T @ g
        if np.abs(rg).max() <= tol:
            break
        Hr = Nb.T @ (Nb / lam[:, None])
        step = Nb @ np.linalg.solve(Hr, -rg)
        neg = step < 0
        t = min(1.0, 0.99 * np.min(-lam[neg] / step[neg])) if neg.any() else 1.0
        while t > 1e-16:
            trial = lam + t * step
            if np.all(trial > 0):
                ft = obj(trial)
                if ft <= f + 1e-4 * t * (g @ step):
                    break
            t *= 0.5
        else:
            break
        lam, f = trial, ft
    full = np.zeros(w.size)
    full[keep] = lam
    return f, full


# -- public entry point --------------------------------------------------------------------

def cramer_transform(x, z, sigma, method: str = "dual") -> CramerResult:
    """L(x, z): Legendre dual of H(x, .) ("dual") or constrained minimum of relative entropy ("primal_oracle")."""
    x = as_simplex_point(x, tol=1e-9)
    z = as_tangent(z)
    w = law_weights(x, sigma)
    n = x.size
    if method == "dual":
        vals, u, p, status, info = cramer_batch(w[None], z[None])
        st = str(status[0])
        if st == "infeasible":
            return CramerResult(math.inf, None, None, "dual", st, certificate=info["certificates"].get(0))
        lam = IncrementLaw.from_vector(n, p[0] / p[0].sum())
        resid = float(np.abs(p[0] @ increments(n) - z).max())
        return CramerResult(float(vals[0]), u[0], lam, "dual", st, int(info["iterations"][0]), resid,
                            max_tilt=float(np.abs(u[0]).max()))
    if method == "primal_oracle":
        val, lam = primal_entropy_min(w, z)
        if lam is None:
            _, _, cert = _face_mask_lp(w, z, n)
            return CramerResult(math.inf, None, None, "primal_oracle", "infeasible", certificate=cert)
        law = IncrementLaw.from_vector(n, lam / lam.sum())
        resid = float(np.abs(lam @ increments(n) - z).max())
        status = "interior" if np.all((lam > 0) == (w > 0)) else "face"
        return CramerResult(val, None, law, "primal_oracle", status, residual=resid)
    raise ValueError(f"unknown method {method!r}")


def running_cost(game, protocol, x, z) -> np.ndarray:
    """L(x, z) at batched states and displacements, with nu from the limiting protocol."""
    from ..protocols import switch_matrix_array

    x = np.atleast_2d(np.asarray(x, dtype=float))
    z = np.atleast_2d(np.asarray(z, dtype=float))
    w = increment_weights(x, switch_matrix_array(game, protocol, x))
    return cramer_batch(w, z)[0]

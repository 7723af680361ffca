"""Moving an increment law onto the increments available on a face, keeping its mean."""

from __future__ import annotations

import numpy as np

from ..process import IncrementLaw

MEAN_TOL = 1e-12


def face_project(lam: IncrementLaw, I) -> tuple[IncrementLaw, np.ndarray]:
    """Return (lam_bar, chi): a law charging only moves out of actions in I, same mean as lam.

    Rows k outside I are zeroed in increasing order. While row k has mass, take the
    first j with lam_kj > 0 and the first i with lam_ik > 0 and remove c = min of the two:

    * i != j: lam_kj, lam_ik -= c; lam_ij += c; null += c
    * i == j outside I: lam_kj, lam_jk -= c; null += 2c
    * i == j in I: as above, and chi_i += c

    ``chi`` is indexed like ``sorted(I)``.
    """
    n = lam.n
    I = sorted(set(int(i) for i in I))
    K = [k for k in range(n) if k not in I]
    z = lam.mean()
    if K and np.min(z[K]) < -MEAN_TOL:
        raise ValueError("mean of lambda must be nonnegative on actions outside I")
    off = lam.off.copy()
    null = lam.null
    chi = np.zeros(n)
    in_I = np.zeros(n, dtype=bool)
    in_I[I] = True
    for k in K:
        while True:
            row = off[k].copy()
            row[k] = 0.0
            if not np.any(row > 0):
                break
            col = off[:, k].copy()
            col[k] = 0.0
            if not np.any(col > 0):
                if row.sum() <= MEAN_TOL:
                    # rounding residue: the mean constraint forces this row to zero
                    null += row.sum()
                    off[k] = 0.0
                    break
                raise ValueError("mean of lambda is negative on an action outside I")
            j = int(np.flatnonzero(row > 0)[0])
            i = int(np.flatnonzero(col > 0)[0])
            a, b = off[k, j], off[i, k]
            c = min(a, b)
            off[k, j] = 0.0 if a <= b else a - c
            off[i, k] = 0.0 if b <= a else b - c
            if i != j:
                off[i, j] += c
                null += c
            else:
                null += 2 * c
                if in_I[i]:
                    chi[i] += c
    np.fill_diagonal(off, 0.0)
    bar = IncrementLaw.__new__(IncrementLaw)
    object.__setattr__(bar, "off", off)
    object.__setattr__(bar, "null", float(null))
    return bar, chi[I]


def projection_residuals(lam: IncrementLaw, bar: IncrementLaw, chi, I) -> dict:
    """Residuals of the identities relating lam, its projection and chi (all should be <= 0 or ~0)."""
    n = lam.n
    I = sorted(set(int(i) for i in I))
    K = [k for k in range(n) if k not in I]
    d = bar.off - lam.off
    row_K = lam.off[K].sum()
    rows, cols = d.sum(axis=1), d.sum(axis=0)
    return {
        "rows": float(np.max(np.abs(rows[I] + chi), initial=0.0)),
        "cols": float(np.max(np.abs(cols[I] + chi), initial=0.0)),
        "null": abs((bar.null - lam.null) - (row_K + chi.sum())),
        "chi_excess": float(chi.sum() - row_K),
        "variation_excess": float(np.abs(d).sum() - 3 * row_K),
        "mean": float(np.abs(bar.mean() - lam.mean()).max()),
        "outside_rows": float(bar.off[K].sum()) if K else 0.0,
    }

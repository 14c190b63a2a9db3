"""Numba kernels for factorization replay, triangular solves, and matvecs.

The numeric factorization executes a precomputed operand-position program:
per-row update column lists and a scatter map from the input value array.  It
touches no pattern data structures and allocates nothing; all buffers are
preallocated by the caller and reused across factorizations.
"""

from __future__ import annotations

import numpy as np
from numba import njit

__all__ = [
    "ldl_factor_program",
    "lower_solve",
    "lower_t_solve",
    "diag_solve",
    "sym_upper_matvec",
    "csc_matvec",
    "csc_t_matvec",
]


@njit(cache=True)
def ldl_factor_program(n, Lp, Li, row_start, row_cols, a_start, a_srcpos, a_dstrow,
                       adata, delta, signs, Lx, D, Y, lnz, reg):
    """Up-looking LDL' replay over the permuted pattern.

    Row k of L is obtained by scattering the matrix column into the dense
    accumulator Y and consuming the precomputed update list; each consumed
    column j contributes L[k,j] at a statically known slot.  Pivots falling
    under ``delta`` in magnitude (or disagreeing with a nonzero expected sign)
    are replaced by +-delta, with the shift recorded in ``reg``.
    """
    for i in range(n):
        lnz[i] = 0
        Y[i] = 0.0
    for k in range(n):
        for t in range(a_start[k], a_start[k + 1]):
            Y[a_dstrow[t]] += adata[a_srcpos[t]]
        d = Y[k]
        Y[k] = 0.0
        for t in range(row_start[k], row_start[k + 1]):
            j = row_cols[t]
            yj = Y[j]
            Y[j] = 0.0
            p0 = Lp[j]
            p1 = p0 + lnz[j]
            for p in range(p0, p1):
                Y[Li[p]] -= Lx[p] * yj
            lkj = yj / D[j]
            d -= lkj * yj
            Lx[p1] = lkj
            lnz[j] += 1
        s = signs[k]
        r = 0.0
        if s > 0:
            if d < delta:
                r = delta - d
                d = delta
        elif s < 0:
            if d > -delta:
                r = -delta - d
                d = -delta
        else:
            if -delta < d < delta:
                dd = delta if d >= 0.0 else -delta
                r = dd - d
                d = dd
        reg[k] = r
        D[k] = d


@njit(cache=True)
def lower_solve(n, Lp, Li, Lx, x):
    """Solve (I + L) y = x in place, L strictly lower CSC with unit diagonal."""
    for j in range(n):
        xj = x[j]
        if xj != 0.0:
            for p in range(Lp[j], Lp[j + 1]):
                x[Li[p]] -= Lx[p] * xj


@njit(cache=True)
def lower_t_solve(n, Lp, Li, Lx, x):
    """Solve (I + L)' y = x in place."""
    for j in range(n - 1, -1, -1):
        acc = x[j]
        for p in range(Lp[j], Lp[j + 1]):
            acc -= Lx[p] * x[Li[p]]
        x[j] = acc


@njit(cache=True)
def diag_solve(n, D, x):
    for j in range(n):
        x[j] /= D[j]


@njit(cache=True)
def sym_upper_matvec(n, Mp, Mi, Mx, x, y):
    """y = M x for symmetric M stored as its upper triangle in CSC."""
    for i in range(n):
        y[i] = 0.0
    for j in range(n):
        xj = x[j]
        acc = 0.0
        for p in range(Mp[j], Mp[j + 1]):
            i = Mi[p]
            v = Mx[p]
            y[i] += v * xj
            if i != j:
                acc += v * x[i]
        y[j] += acc


@njit(cache=True)
def csc_matvec(n_rows, n_cols, Ap, Ai, Ax, x, y):
    """y = A x for a rectangular CSC matrix."""
    for i in range(n_rows):
        y[i] = 0.0
    for j in range(n_cols):
        xj = x[j]
        if xj != 0.0:
            for p in range(Ap[j], Ap[j + 1]):
                y[Ai[p]] += Ax[p] * xj


@njit(cache=True)
def csc_t_matvec(n_rows, n_cols, Ap, Ai, Ax, x, y):
    """y = A' x for a rectangular CSC matrix."""
    for j in range(n_cols):
        acc = 0.0
        for p in range(Ap[j], Ap[j + 1]):
            acc += Ax[p] * x[Ai[p]]
        y[j] = acc

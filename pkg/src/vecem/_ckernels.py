"""Compiled per-point kernels for the sequential likelihood and local prediction.

Everything here is numba-jitted and operates on small per-point blocks:
correlation fills, an in-place Cholesky, triangular solves, and the range
derivative ratio. Parallel callers write only to per-point output slots,
so results are bitwise reproducible regardless of thread count; all
cross-point reductions happen in numpy afterwards in a fixed order.

Family codes match kernels.POW_EXP / MATERN32 / MATERN52. The derivative
ratio rho is defined by d c / d lambda = c * rho and stays finite even
where c underflows.
"""

import numpy as np
from numba import njit

SQ3 = np.sqrt(3.0)
SQ5 = np.sqrt(5.0)


@njit(cache=True, inline="always")
def corr_pair(Xa, ia, Xb, ib, code, alpha, lam):
    """Product correlation between rows ia of Xa and ib of Xb."""
    p = Xa.shape[1]
    ssum = 0.0
    poly = 1.0
    if code == 0:
        for l in range(p):
            d = abs(Xa[ia, l] - Xb[ib, l])
            ssum += (d / lam[l]) ** alpha
        return np.exp(-ssum)
    if code == 1:
        for l in range(p):
            s = SQ3 * abs(Xa[ia, l] - Xb[ib, l]) / lam[l]
            ssum += s
            poly *= 1.0 + s
        return poly * np.exp(-ssum)
    for l in range(p):
        s = SQ5 * abs(Xa[ia, l] - Xb[ib, l]) / lam[l]
        ssum += s
        poly *= 1.0 + s + s * s / 3.0
    return poly * np.exp(-ssum)


@njit(cache=True, inline="always")
def deriv_ratio(code, alpha, d, lam):
    """rho with d c/d lambda = c * rho; zero at d = 0 for every family."""
    if code == 0:
        t = d / lam
        return alpha * t ** alpha / lam
    if code == 1:
        s = SQ3 * d / lam
        return s * s / (lam * (1.0 + s))
    s = SQ5 * d / lam
    return (s * s / 3.0) * (1.0 + s) / (lam * (1.0 + s + s * s / 3.0))


@njit(cache=True)
def chol_inplace(A, c):
    """Lower Cholesky factor into the lower triangle of A[:c,:c].

    Returns False when a pivot is nonpositive or non-finite. The upper
    triangle is left untouched.
    """
    for a in range(c):
        s = A[a, a]
        for t in range(a):
            s -= A[a, t] * A[a, t]
        if s <= 0.0 or not np.isfinite(s):
            return False
        piv = np.sqrt(s)
        A[a, a] = piv
        for b in range(a + 1, c):
            s2 = A[b, a]
            for t in range(a):
                s2 -= A[b, t] * A[a, t]
            A[b, a] = s2 / piv
    return True


@njit(cache=True)
def solve_chol_vec(L, c, x):
    """x := (L L')^{-1} x using the lower factor in L[:c,:c]."""
    for a in range(c):
        s = x[a]
        for t in range(a):
            s -= L[a, t] * x[t]
        x[a] = s / L[a, a]
    for a in range(c - 1, -1, -1):
        s = x[a]
        for t in range(a + 1, c):
            s -= L[t, a] * x[t]
        x[a] = s / L[a, a]


@njit(cache=True)
def solve_chol_mat(L, c, B, ncol):
    """B[:, col] := (L L')^{-1} B[:, col] for col < ncol."""
    for col in range(ncol):
        for a in range(c):
            s = B[a, col]
            for t in range(a):
                s -= L[a, t] * B[t, col]
            B[a, col] = s / L[a, a]
        for a in range(c - 1, -1, -1):
            s = B[a, col]
            for t in range(a + 1, c):
                s -= L[t, a] * B[t, col]
            B[a, col] = s / L[a, a]

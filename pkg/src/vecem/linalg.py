"""Small shared linear-algebra helpers."""

import numpy as np

from .errors import ConditioningError

# Diagonal jitter schedule tried when a Cholesky factorization fails.
JITTER_START = 1e-10
JITTER_MAX = 1e-6
JITTER_STEP = 10.0


def chol_with_jitter(A, name="covariance matrix"):
    """Lower Cholesky factor of A, escalating diagonal jitter on failure.

    Tries the matrix as given, then adds jitter starting at 1e-10 and
    growing tenfold up to 1e-6. Raises ConditioningError if every attempt
    fails.

    Returns
    -------
    (L, jitter)
        L is the lower factor (L @ L.T reproduces A plus jitter * I);
        jitter is 0.0 when none was needed.
    """
    try:
        return np.linalg.cholesky(A), 0.0
    except np.linalg.LinAlgError:
        pass
    jitter = JITTER_START
    eye = np.eye(A.shape[0])
    while jitter <= JITTER_MAX * (1.0 + 1e-12):
        try:
            return np.linalg.cholesky(A + jitter * eye), jitter
        except np.linalg.LinAlgError:
            jitter *= JITTER_STEP
    raise ConditioningError(
        f"{name} is not positive definite even with jitter up to {JITTER_MAX:g}")


def solve_lower(L, B):
    """Solve L X = B with L lower triangular."""
    from scipy.linalg import solve_triangular
    return solve_triangular(L, B, lower=True)


def chol_solve(L, B):
    """Solve (L L') X = B given the lower factor L."""
    from scipy.linalg import cho_solve
    return cho_solve((L, True), B)


def logdet_from_chol(L):
    """log det(L L') from the lower factor's diagonal."""
    return 2.0 * float(np.sum(np.log(np.diag(L))))

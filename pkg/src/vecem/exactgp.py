"""Dense-matrix marginal posterior and generalized least squares.

This is the exact path: everything here factors the full n x n
correlation matrix. It serves two roles. It is the correctness oracle
the sequential approximation in the vecchia module is tested against
(the two agree exactly when every point conditions on all of its
predecessors), and it is the baseline method for benchmarks and for
moderate n where dense factorization is affordable.

With Rt = R + nu2 I, H the (n, q) trend matrix and q < n, integrating
the trend coefficients and the variance out of the likelihood leaves,
per output column l,

    S2_l = y_l' Rt^-1 y_l - (H' Rt^-1 y_l)' (H' Rt^-1 H)^-1 (H' Rt^-1 y_l)

and on the -2 log scale, k columns sharing one correlation matrix,

    neg2log = (n - q) sum_l log S2_l + k log|Rt| + k log|H' Rt^-1 H|
              - 2 log pi(lambda).

Constants are dropped the same way in the vecchia module, so the two
paths are directly comparable.
"""

import numpy as np
from scipy.linalg import lapack

from .design import as_outputs, as_points
from .errors import DegenerateDataError, InvalidParameterError, RankError, ShapeError
from .kernels import corr_from_dists, corr_grad_from_dists, pairwise_absdiff
from .linalg import chol_with_jitter, chol_solve, logdet_from_chol
from .trend import TrendBasis

# Above this many bytes the per-dimension distance cache is rebuilt per
# evaluation instead of held in memory.
DIST_CACHE_LIMIT = 8e8


class ExactEval:
    """Result of one exact marginal evaluation.

    Attributes
    ----------
    neg2log : float
    s2 : (k,) ndarray
        Profiled quadratic forms, one per output column.
    beta : (q, k) ndarray
        Generalized least squares trend coefficients.
    chol : (n, n) ndarray
        Lower Cholesky factor of R + nu2 I (plus jitter if needed).
    jitter : float
    grad : (p,) ndarray or None
        Range-parameter gradient of neg2log when requested.
    """

    def __init__(self, neg2log, s2, beta, chol, jitter, grad=None):
        self.neg2log = neg2log
        self.s2 = s2
        self.beta = beta
        self.chol = chol
        self.jitter = jitter
        self.grad = grad


def _sym_from_potri(L):
    # dpotri overwrites one triangle with the inverse; mirror it.
    inv, info = lapack.dpotri(L, lower=1)
    if info != 0:
        raise RankError(f"triangular inversion failed with code {info}")
    out = np.tril(inv) + np.tril(inv, -1).T
    return out


class ExactEvaluator:
    """Repeated exact evaluations on fixed data, ranges varying.

    Holds the per-dimension distance blocks (range-independent) so each
    optimizer step pays only the kernel transform and one factorization.
    """

    def __init__(self, design, Y, base_spec, trend, prior=None):
        X = as_points(design)
        Y = as_outputs(Y, X)
        self.X = X
        self.Y = Y
        self.base_spec = base_spec
        self.trend = trend if isinstance(trend, TrendBasis) else TrendBasis(trend)
        self.prior = prior
        self.H = self.trend.evaluate(X)
        self.n, self.p = X.shape
        self.q = self.H.shape[1]
        self.k = Y.shape[1]
        if self.n <= self.q:
            raise InvalidParameterError(
                f"need n > q, got n={self.n}, q={self.q}")
        if self.p * self.n * self.n * 8 <= DIST_CACHE_LIMIT:
            self._D = pairwise_absdiff(X, X)
        else:
            self._D = None

    def _dists(self):
        if self._D is not None:
            return self._D
        return pairwise_absdiff(self.X, self.X)

    def evaluate(self, lam=None, need_grad=False):
        """Exact marginal neg2log (and gradient) at the given ranges.

        Parameters
        ----------
        lam : (p,) array, optional
            Ranges; defaults to the spec the evaluator was built with.
        need_grad : bool

        Returns
        -------
        ExactEval
        """
        spec = self.base_spec if lam is None else self.base_spec.with_ranges(lam)
        n, q, k = self.n, self.q, self.k
        D = self._dists()
        if need_grad:
            C, dC = corr_grad_from_dists(spec, D)
        else:
            C = corr_from_dists(spec, D)
            dC = None
        R = C
        if spec.nugget_ratio > 0.0:
            R = R + spec.nugget_ratio * np.eye(n)
        L, jitter = chol_with_jitter(R, name="training correlation matrix")
        logdet_R = logdet_from_chol(L)

        Ys = chol_solve(L, self.Y)
        quad = np.einsum("nk,nk->k", self.Y, Ys)
        if q > 0:
            Hs = chol_solve(L, self.H)
            M = self.H.T @ Hs
            try:
                LM = np.linalg.cholesky(M)
            except np.linalg.LinAlgError:
                raise RankError(
                    "trend information matrix H' Rt^-1 H is singular") from None
            logdet_M = logdet_from_chol(LM)
            b = self.H.T @ Ys
            beta = chol_solve(LM, b)
            s2 = quad - np.einsum("qk,qk->k", b, beta)
        else:
            Hs = np.empty((n, 0))
            M = np.empty((0, 0))
            logdet_M = 0.0
            beta = np.empty((0, k))
            s2 = quad
        if np.any(s2 <= 0.0) or not np.all(np.isfinite(s2)):
            raise DegenerateDataError(
                f"nonpositive profiled quadratic form, s2={s2}")

        value = (n - q) * float(np.sum(np.log(s2))) + k * logdet_R + k * logdet_M
        if self.prior is not None:
            pval, pgrad = self.prior.neg2log(spec.ranges)
            value += pval
        ev = ExactEval(value, s2, beta, L, jitter)
        if not need_grad:
            return ev

        Rinv = _sym_from_potri(L)
        resid_solve = Ys - Hs @ beta if q > 0 else Ys
        if q > 0:
            Minv = chol_solve(LM, np.eye(q))
        grad = np.empty(self.p)
        for j in range(self.p):
            Rp = dC[j]
            g = k * float(np.sum(Rinv * Rp))
            if q > 0:
                T = Rp @ Hs
                g -= k * float(np.sum((Hs.T @ T) * Minv))
            U = Rp @ resid_solve
            ds2 = -np.einsum("nk,nk->k", resid_solve, U)
            g += (n - q) * float(np.sum(ds2 / s2))
            grad[j] = g
        if self.prior is not None:
            grad += pgrad
        ev.grad = grad
        return ev


def exact_marginal_neg2log(design, Y, spec, trend, prior=None, need_grad=False):
    """One-shot exact marginal posterior evaluation.

    See ExactEvaluator for the cached variant used inside optimization.
    """
    return ExactEvaluator(design, Y, spec, trend, prior).evaluate(
        need_grad=need_grad)


def gls_beta(design, Y, spec, trend):
    """Generalized least squares trend coefficients, one column per output.

    beta_j solves (H' Rt^-1 H) beta_j = H' Rt^-1 y_j with Rt = R + nu2 I.

    Returns
    -------
    (q, k) ndarray
    """
    X = as_points(design)
    Y = as_outputs(Y, X)
    trend = trend if isinstance(trend, TrendBasis) else TrendBasis(trend)
    H = trend.evaluate(X)
    q = H.shape[1]
    if q == 0:
        return np.empty((0, Y.shape[1]))
    D = pairwise_absdiff(X, X)
    R = corr_from_dists(spec, D)
    if spec.nugget_ratio > 0.0:
        R = R + spec.nugget_ratio * np.eye(X.shape[0])
    L, _ = chol_with_jitter(R, name="training correlation matrix")
    Hs = chol_solve(L, H)
    M = H.T @ Hs
    try:
        LM = np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise RankError("trend information matrix H' Rt^-1 H is singular") from None
    return chol_solve(LM, H.T @ chol_solve(L, Y))


def sigma2_hat(design, Y, spec, trend, beta):
    """Per-output variance estimates at given trend coefficients.

    sigma2_j = (y_j - H beta_j)' Rt^-1 (y_j - H beta_j) / (n - q).
    """
    X = as_points(design)
    Y = as_outputs(Y, X)
    trend = trend if isinstance(trend, TrendBasis) else TrendBasis(trend)
    H = trend.evaluate(X)
    n, q = H.shape
    if n <= q:
        raise InvalidParameterError(f"need n > q, got n={n}, q={q}")
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (q, Y.shape[1]):
        raise ShapeError(
            f"beta must be ({q}, {Y.shape[1]}), got {beta.shape}")
    resid = Y - H @ beta if q > 0 else Y
    R = corr_from_dists(spec, pairwise_absdiff(X, X))
    if spec.nugget_ratio > 0.0:
        R = R + spec.nugget_ratio * np.eye(n)
    L, _ = chol_with_jitter(R, name="training correlation matrix")
    Rs = chol_solve(L, resid)
    return np.einsum("nk,nk->k", resid, Rs) / (n - q)

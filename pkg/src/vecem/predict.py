"""Student-t prediction from a fitted emulator.

Every output column shares the correlation structure, so one factorization
of the training correlation matrix serves all columns at once: the
predictive mean is the trend plus a correlation-weighted combination of
training residuals, and the scale is a per-output variance times a common
factor c** that depends only on the test location.

Two modes are provided. predict_exact uses all n training points and one
dense factorization shared by the whole test batch. predict_nn restricts
each test point to its m_pred nearest training points in the fitted
range-scaled metric and solves a small system per point, which is the
practical mode when n is large. Both report scale**2 = sigma2_j * c**
with n - q degrees of freedom; intervals come from the t quantile.

Inputs are accepted in raw units and mapped through the normalization
bounds stored in the model.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from numba import njit, prange
from scipy.spatial.distance import cdist
from scipy.stats import t as student_t

from ._ckernels import chol_inplace, corr_pair, solve_chol_mat, solve_chol_vec
from .errors import InvalidParameterError, RankError, ShapeError
from .kernels import corr_matrix, cross_corr
from .linalg import JITTER_MAX, JITTER_START, JITTER_STEP, chol_solve, chol_with_jitter

CSTAR_WARN_FLOOR = -1e-10


@dataclass
class PredictiveResult:
    """Pointwise t predictions for a batch of test inputs.

    mean and scale2 are (t, k); c is the shared (t,) factor with
    scale2[i, j] = sigma2[j] * c[i]; dof = n - q.
    """
    mean: np.ndarray
    scale2: np.ndarray
    dof: int
    c: np.ndarray

    @property
    def c_star_star(self):
        return self.c

    def sd(self):
        return np.sqrt(self.scale2)

    def interval(self, level=0.95):
        """Central t interval per output; returns (lo, hi) arrays."""
        if not (0.0 < level < 1.0):
            raise InvalidParameterError(f"level must be in (0, 1), got {level}")
        quant = student_t.ppf(0.5 * (1.0 + level), self.dof)
        half = quant * self.sd()
        return self.mean - half, self.mean + half


def _test_inputs(model, X):
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=np.float64)))
    if X.ndim != 2 or X.shape[1] != model.design.p:
        raise ShapeError(
            f"test inputs must have {model.design.p} columns, got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidParameterError("test inputs must be finite")
    return model.design.map_to_unit(X)


def _clamp_c(c):
    low = float(c.min()) if c.size else 0.0
    if low < CSTAR_WARN_FLOOR:
        warnings.warn(f"predictive factor c** = {low:.3e} < 0 clamped to 0")
    return np.maximum(c, 0.0)


def _trend_factor(L, H):
    """Factor M = H^T Rt^-1 H; returns (Minv_apply, Rinv_H)."""
    Rinv_H = chol_solve(L, H)
    M = H.T @ Rinv_H
    try:
        LM = np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise RankError("trend normal matrix is not positive definite")
    return LM, Rinv_H


def predict_exact(model, X):
    """Dense prediction at raw-unit test inputs using all n points.

    Returns a PredictiveResult with one row per test input.
    """
    Xq = _test_inputs(model, X)
    Xt = model.design.points
    Y = model.outputs
    spec = model.spec
    n = Xt.shape[0]
    Rt = corr_matrix(spec, Xt)
    if spec.nugget_ratio:
        Rt[np.diag_indices_from(Rt)] += spec.nugget_ratio
    L, _ = chol_with_jitter(Rt, "training correlation matrix")
    H = model.trend.evaluate(Xt)
    Hq = model.trend.evaluate(Xq)
    q = H.shape[1]
    resid = Y - H @ model.beta if q else Y.copy()
    Rinv_resid = chol_solve(L, resid)
    rc = cross_corr(spec, Xq, Xt)
    mean = rc @ Rinv_resid
    if q:
        mean += Hq @ model.beta
    Rinv_rt = chol_solve(L, rc.T)
    quad = np.einsum("tn,nt->t", rc, Rinv_rt)
    c = 1.0 + spec.nugget_ratio - quad
    if q:
        LM, Rinv_H = _trend_factor(L, H)
        B = Hq.T - Rinv_H.T @ rc.T
        MB = np.linalg.solve(LM.T, np.linalg.solve(LM, B))
        c = c + np.einsum("qt,qt->t", B, MB)
    c = _clamp_c(c)
    scale2 = c[:, None] * np.asarray(model.sigma2)[None, :]
    return PredictiveResult(mean, scale2, model.dof, c)


def ppe_weights(model, X):
    """Training-output weights: mean(x*) = weights(x*) @ outputs.

    Returns (t, n) for a batch, (n,) for a single input. With a constant
    trend the weights of each row sum to one exactly (in arithmetic).
    """
    single = np.asarray(X).ndim == 1
    Xq = _test_inputs(model, X)
    Xt = model.design.points
    spec = model.spec
    Rt = corr_matrix(spec, Xt)
    if spec.nugget_ratio:
        Rt[np.diag_indices_from(Rt)] += spec.nugget_ratio
    L, _ = chol_with_jitter(Rt, "training correlation matrix")
    H = model.trend.evaluate(Xt)
    Hq = model.trend.evaluate(Xq)
    q = H.shape[1]
    rc = cross_corr(spec, Xq, Xt)
    W = chol_solve(L, rc.T).T
    if q:
        LM, Rinv_H = _trend_factor(L, H)
        G = Hq - W @ H
        GM = np.linalg.solve(LM.T, np.linalg.solve(LM, G.T)).T
        W = W + GM @ Rinv_H.T
    return W[0] if single else W


@njit(cache=True, parallel=True)
def _nn_predict_pass(Xt, resid, H, Xq, Hq, base, sel, code, alpha, lam, nu2,
                     mean, cval, fail):
    t, m = sel.shape
    k = resid.shape[1]
    q = H.shape[1]
    for i in prange(t):
        K = np.empty((m, m))
        Kf = np.empty((m, m))
        r = np.empty(m)
        w = np.empty(m)
        Hloc = np.empty((m, q))
        Hv = np.empty((m, q))
        for a in range(m):
            ia = sel[i, a]
            r[a] = corr_pair(Xq, i, Xt, ia, code, alpha, lam)
            for b in range(a):
                K[a, b] = corr_pair(Xt, ia, Xt, sel[i, b], code, alpha, lam)
            K[a, a] = 1.0 + nu2
            for aq in range(q):
                Hloc[a, aq] = H[ia, aq]
        ok = False
        delta = 0.0
        while True:
            for a in range(m):
                for b in range(a):
                    Kf[a, b] = K[a, b]
                Kf[a, a] = K[a, a] + delta
            if chol_inplace(Kf, m):
                ok = True
                break
            delta = JITTER_START if delta == 0.0 else delta * JITTER_STEP
            if delta > JITTER_MAX * (1.0 + 1e-12):
                break
        if not ok:
            fail[i] = 1
            cval[i] = np.nan
            for l in range(k):
                mean[i, l] = np.nan
            continue
        for a in range(m):
            w[a] = r[a]
        solve_chol_vec(Kf, m, w)
        quad = 0.0
        for a in range(m):
            quad += r[a] * w[a]
        cc = 1.0 + nu2 - quad
        if q > 0:
            for a in range(m):
                for aq in range(q):
                    Hv[a, aq] = Hloc[a, aq]
            solve_chol_mat(Kf, m, Hv, q)
            M = np.empty((q, q))
            for aq in range(q):
                for bq in range(aq + 1):
                    s = 0.0
                    for a in range(m):
                        s += Hloc[a, aq] * Hv[a, bq]
                    M[aq, bq] = s
            if not chol_inplace(M, q):
                fail[i] = 2
                cval[i] = np.nan
                for l in range(k):
                    mean[i, l] = np.nan
                continue
            B = np.empty(q)
            MB = np.empty(q)
            for aq in range(q):
                s = Hq[i, aq]
                for a in range(m):
                    s -= Hloc[a, aq] * w[a]
                B[aq] = s
                MB[aq] = s
            solve_chol_vec(M, q, MB)
            for aq in range(q):
                cc += B[aq] * MB[aq]
        cval[i] = cc
        for l in range(k):
            mean[i, l] = base[i, l]
        for a in range(m):
            wa = w[a]
            ia = sel[i, a]
            for l in range(k):
                mean[i, l] += wa * resid[ia, l]


def nearest_training(model, X, m_pred):
    """Indices of the m_pred nearest training points per test input.

    Distance is Euclidean after dividing each dimension by its fitted
    range; ties break toward the lower training row. Rows of the result
    are sorted ascending.
    """
    Xq = _test_inputs(model, X)
    n = model.design.n
    m_pred = int(m_pred)
    if not (1 <= m_pred <= n):
        raise InvalidParameterError(
            f"m_pred must be in [1, {n}], got {m_pred}")
    inv = 1.0 / model.spec.ranges
    d2 = cdist(Xq * inv, model.design.points * inv, "sqeuclidean")
    t = Xq.shape[0]
    sel = np.empty((t, m_pred), dtype=np.int64)
    rows = np.arange(n)
    for i in range(t):
        order = np.lexsort((rows, d2[i]))
        sel[i] = np.sort(order[:m_pred])
    return sel


def predict_nn(model, X, m_pred):
    """Prediction conditioning each test point on its m_pred nearest
    training points in the fitted range-scaled metric.

    Trend coefficients, per-output variances, and degrees of freedom are
    the full-fit values; only the conditioning set shrinks. m_pred = n
    reproduces predict_exact.
    """
    Xq = _test_inputs(model, X)
    sel = nearest_training(model, X, m_pred)
    spec = model.spec
    Xt = np.ascontiguousarray(model.design.points)
    H = np.ascontiguousarray(model.trend.evaluate(Xt))
    Hq = np.ascontiguousarray(model.trend.evaluate(Xq))
    q = H.shape[1]
    resid = model.outputs - H @ model.beta if q else model.outputs
    resid = np.ascontiguousarray(resid)
    base = Hq @ model.beta if q else np.zeros((Xq.shape[0], resid.shape[1]))
    base = np.ascontiguousarray(base)
    t = Xq.shape[0]
    mean = np.empty((t, resid.shape[1]))
    cval = np.empty(t)
    fail = np.zeros(t, dtype=np.int64)
    alpha = spec.alpha if spec.alpha is not None else 0.0
    _nn_predict_pass(Xt, resid, H, np.ascontiguousarray(Xq), Hq, base, sel,
                     spec.code, alpha, spec.ranges, spec.nugget_ratio,
                     mean, cval, fail)
    if np.any(fail == 1):
        i = int(np.argmax(fail == 1))
        raise RankError(
            f"local correlation matrix for test input {i} could not be "
            f"factorized")
    if np.any(fail == 2):
        i = int(np.argmax(fail == 2))
        raise RankError(
            f"local trend normal matrix for test input {i} is singular")
    cval = _clamp_c(cval)
    scale2 = cval[:, None] * np.asarray(model.sigma2)[None, :]
    return PredictiveResult(mean, scale2, model.dof, cval)


def rmse(pred, truth):
    """Root mean squared error over all entries."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ShapeError(
            f"prediction shape {pred.shape} != truth shape {truth.shape}")
    if pred.size == 0:
        raise InvalidParameterError("rmse of empty arrays is undefined")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def relative_rmse(pred, truth):
    """RMSE divided by the root mean square of the true values."""
    err = rmse(pred, truth)
    scale = float(np.sqrt(np.mean(np.asarray(truth, dtype=np.float64) ** 2)))
    if scale == 0.0:
        raise InvalidParameterError(
            "relative rmse undefined for identically zero truth")
    return err / scale

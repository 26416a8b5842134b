"""Model fitting: optimizer harness, range scaling rounds, fitted models.

The range parameters are estimated by minimizing the -2 log marginal
posterior in the reparameterization xi_l = -log lambda_l (positivity by
construction). Minimization is limited-memory quasi-Newton from two
starts, a "small" one at half the mean pairwise distances and a "large"
one at fifty times them; the better terminal value wins and per-start
convergence is recorded rather than hidden.

For the sequential method the conditioning plan itself depends on the
ranges, so fitting alternates: build the plan at the current range guess,
optimize, rebuild at the estimate and optimize again (two rounds by
default, later rounds also warm-started at the previous estimate).

Inputs are normalized to the unit cube per dimension before anything
else, and the normalization bounds travel with the fitted model, so
prediction accepts raw-unit inputs while the reported ranges live in
normalized units.
"""

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .design import DesignMatrix, as_outputs
from .errors import FitError, InvalidParameterError, NumericalError
from .exactgp import ExactEvaluator
from .kernels import KernelSpec
from .ordering import default_scale, maximin_order, nn_condition
from .priors import PriorSpec, jr_prior_neg2log, mean_pairwise_distance
from .trend import TrendBasis

BAD_OBJECTIVE = 1e25


@dataclass
class OptState:
    """Terminal state of one quasi-Newton run (iterate in xi space)."""
    x: np.ndarray
    value: float
    grad: np.ndarray
    converged: bool
    n_iter: int
    n_eval: int
    message: str
    label: str = ""

    def summary(self):
        return {
            "label": self.label,
            "value": None if not np.isfinite(self.value) else float(self.value),
            "converged": bool(self.converged),
            "iterations": int(self.n_iter),
            "evaluations": int(self.n_eval),
            "message": self.message,
        }


@dataclass
class FitOptions:
    """Knobs for fit(); defaults follow the package conventions."""
    maxiter: int = 100
    ftol: float = 1e-8
    gtol: float = 1e-5
    rounds: int = 2
    small_seed_factor: float = 0.5
    large_seed_factor: float = 50.0
    moment_threshold: int = 4000
    subsample_fraction: float = None
    subsample_seed: int = 0
    anchor_seed: int = None


def optimize(fun, seeds, maxiter=100, ftol=1e-8, gtol=1e-5, labels=None):
    """Minimize from several starts, keep the best terminal state.

    Parameters
    ----------
    fun : callable
        Maps an iterate x to (value, gradient).
    seeds : list of 1-d arrays
    maxiter : int
        Iteration budget per start.
    ftol, gtol : float
        Relative objective change and gradient infinity-norm stops.
    labels : list of str, optional
        Names recorded per start.

    Returns
    -------
    (OptState, list of OptState)
        Best state by terminal value, and all states in seed order.
        Starts with a non-finite objective are skipped with a warning;
        if every start is skipped a FitError is raised.
    """
    if labels is None:
        labels = [f"seed{j}" for j in range(len(seeds))]
    states = []
    for x0, label in zip(seeds, labels):
        x0 = np.asarray(x0, dtype=np.float64)
        f0, g0 = fun(x0)
        if not np.isfinite(f0) or f0 >= BAD_OBJECTIVE:
            warnings.warn(f"start {label} has non-finite objective; skipped")
            states.append(OptState(x0, np.inf, np.full_like(x0, np.nan),
                                   False, 0, 1, "objective not finite at start",
                                   label))
            continue
        res = minimize(fun, x0, jac=True, method="L-BFGS-B",
                       options={"maxiter": maxiter, "ftol": ftol, "gtol": gtol})
        states.append(OptState(np.asarray(res.x), float(res.fun),
                               np.asarray(res.jac), bool(res.success),
                               int(res.nit), int(res.nfev), str(res.message),
                               label))
    finite = [s for s in states if np.isfinite(s.value)]
    if not finite:
        raise FitError("no optimizer start produced a finite objective")
    best = min(finite, key=lambda s: s.value)
    return best, states


def subsample_outputs(Y, fraction, seed=0):
    """Seeded random column subset of an output matrix.

    The subset has floor(k * fraction) columns (at least one required),
    drawn without replacement and returned in ascending column order.
    fraction = 1 returns all columns.
    """
    Y = as_outputs(Y)
    k = Y.shape[1]
    idx = _subsample_indices(k, fraction, seed)
    return Y[:, idx]


def _subsample_indices(k, fraction, seed):
    if not (0.0 < fraction <= 1.0):
        raise InvalidParameterError(
            f"subsample fraction must be in (0, 1], got {fraction}")
    ksel = int(np.floor(k * fraction + 1e-12))
    if ksel < 1:
        raise InvalidParameterError(
            f"subsample of {fraction} from {k} columns selects nothing")
    if ksel >= k:
        return np.arange(k)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(k, size=ksel, replace=False))


class FittedEmulator:
    """Immutable result of fit(): data, plan, ranges, trend moments.

    Attributes
    ----------
    spec : KernelSpec
        Kernel with the estimated ranges (normalized units).
    trend : TrendBasis
    beta : (q, k) ndarray
        Per-output trend coefficients.
    sigma2 : (k,) ndarray
        Per-output variance estimates.
    plan : ConditioningPlan or None
        Conditioning plan from the final scaling round (None for the
        exact method).
    dof : int
        n - q, the predictive t degrees of freedom.
    method : str
        "vecchia" or "exact".
    design : DesignMatrix
        Normalized training inputs with their raw-unit bounds.
    outputs : (n, k) ndarray
    diagnostics : dict
    """

    def __init__(self, spec, trend, beta, sigma2, plan, dof, method, m,
                 design, outputs, diagnostics=None):
        self.spec = spec
        self.trend = trend
        self.beta = beta
        self.sigma2 = sigma2
        self.plan = plan
        self.dof = int(dof)
        self.method = method
        self.m = m
        self.design = design
        self.outputs = outputs
        self.diagnostics = diagnostics or {}

    @property
    def n(self):
        return self.design.n

    @property
    def k(self):
        return self.outputs.shape[1]

    def predict(self, X, m_pred=None):
        """Predict at raw-unit inputs; local mode when m_pred is given."""
        from .predict import predict_exact, predict_nn
        if m_pred is None:
            return predict_exact(self, X)
        return predict_nn(self, X, m_pred)

    def save(self, path, design_csv=None, output_csv=None,
             train_index_csv=None):
        """Write the model as JSON.

        Training data is stored as CSV path references when given
        (resolved relative to the model file on load), otherwise
        embedded directly.
        """
        import json
        import os
        obj = {
            "format": "vecem-model",
            "version": 1,
            "family": self.spec.name,
            "ranges": self.spec.ranges.tolist(),
            "nugget_ratio": self.spec.nugget_ratio,
            "trend": self.trend.kind,
            "beta": np.asarray(self.beta).tolist(),
            "sigma2": np.asarray(self.sigma2).tolist(),
            "dof": self.dof,
            "bounds": self.design.bounds.tolist(),
            "method": self.method,
            "m": self.m,
            "diagnostics": self.diagnostics,
        }
        if design_csv is not None and output_csv is not None:
            base = os.path.dirname(os.path.abspath(path))
            obj["training"] = {
                "design_csv": os.path.relpath(os.path.abspath(design_csv), base),
                "output_csv": os.path.relpath(os.path.abspath(output_csv), base),
                "train_index_csv": (
                    os.path.relpath(os.path.abspath(train_index_csv), base)
                    if train_index_csv is not None else None),
            }
        else:
            obj["training"] = {
                "embedded": {
                    "points": self.design.points.tolist(),
                    "outputs": self.outputs.tolist(),
                }
            }
        with open(path, "w") as fh:
            json.dump(obj, fh)

    @classmethod
    def load(cls, path):
        """Reload a model saved by save(); plan is not persisted."""
        import json
        import os
        with open(path) as fh:
            obj = json.load(fh)
        if obj.get("format") != "vecem-model":
            raise InvalidParameterError(f"{path} is not a model file")
        spec = KernelSpec(obj["family"], np.asarray(obj["ranges"]),
                          nugget_ratio=obj["nugget_ratio"])
        trend = TrendBasis(obj["trend"])
        bounds = np.asarray(obj["bounds"], dtype=np.float64)
        training = obj["training"]
        if "embedded" in training:
            design = DesignMatrix(np.asarray(training["embedded"]["points"]),
                                  bounds, normalized=True)
            outputs = np.asarray(training["embedded"]["outputs"], dtype=np.float64)
        else:
            from .cli import read_matrix, read_index
            base = os.path.dirname(os.path.abspath(path))
            raw = read_matrix(os.path.join(base, training["design_csv"]))
            outputs = read_matrix(os.path.join(base, training["output_csv"]))
            if training.get("train_index_csv"):
                idx = read_index(os.path.join(base, training["train_index_csv"]))
                raw = raw[idx]
                outputs = outputs[idx]
            design = DesignMatrix(raw, bounds, normalized=False).normalize()
        beta = np.asarray(obj["beta"], dtype=np.float64)
        sigma2 = np.asarray(obj["sigma2"], dtype=np.float64)
        return cls(spec, trend, beta, sigma2, None, obj["dof"], obj["method"],
                   obj["m"], design, outputs, obj.get("diagnostics", {}))


def _make_prior(prior, Xn):
    if prior is None or prior == "none":
        return PriorSpec.flat()
    if prior == "jr":
        return PriorSpec.jointly_robust(Xn)
    if isinstance(prior, PriorSpec):
        return prior
    raise InvalidParameterError(f"unknown prior {prior!r}")


def _xi_objective(eval_at, p):
    """Wrap lambda-space evaluation as a xi = -log lambda objective."""
    def fun(xi):
        lam = np.exp(-xi)
        try:
            ev = eval_at(lam)
        except NumericalError:
            return BAD_OBJECTIVE, np.zeros(p)
        if (not np.isfinite(ev.neg2log) or ev.grad is None
                or not np.all(np.isfinite(ev.grad))):
            return BAD_OBJECTIVE, np.zeros(p)
        return ev.neg2log, -ev.grad * lam
    return fun


def fit(design, Y, family="matern32", alpha=None, trend="constant", m=30,
        method="vecchia", prior="jr", nugget_ratio=0.0, options=None):
    """Fit an emulator by marginal posterior mode over the ranges.

    Parameters
    ----------
    design : DesignMatrix or (n, p) array
        Training inputs in raw units.
    Y : OutputMatrix or (n, k) array
        Training outputs, one column per output index.
    family : str
        Kernel family ("matern32", "matern52", "pow_exp:<alpha>").
    alpha : float, optional
        pow_exp exponent if not in the family name.
    trend : str or TrendBasis
    m : int
        Conditioning-set size for the sequential method.
    method : str
        "vecchia" (sequential likelihood, scalable) or "exact" (dense).
    prior : str, PriorSpec or None
        "jr" (default), "none", or an explicit PriorSpec.
    nugget_ratio : float
        Fixed noise-to-signal ratio nu2 (not estimated).
    options : FitOptions, optional

    Returns
    -------
    FittedEmulator
    """
    t_start = time.perf_counter()
    opts = options or FitOptions()
    if method not in ("vecchia", "exact"):
        raise InvalidParameterError(f"unknown method {method!r}")
    dm = design if isinstance(design, DesignMatrix) else DesignMatrix(design)
    Y = as_outputs(Y, dm)
    dm.validate_distinct()
    norm = dm.normalize()
    Xn = norm.points
    n, p = Xn.shape
    trend = trend if isinstance(trend, TrendBasis) else TrendBasis(trend)
    q = trend.n_functions(p)
    if n <= q:
        raise InvalidParameterError(f"need n > q = {q}, got n = {n}")
    if method == "vecchia":
        m = int(m)
        if not (1 <= m <= n - 1):
            raise InvalidParameterError(
                f"conditioning size m must be in [1, {n - 1}], got {m}")
    prior_spec = _make_prior(prior, Xn)
    if opts.subsample_fraction is not None:
        est_idx = _subsample_indices(Y.shape[1], opts.subsample_fraction,
                                     opts.subsample_seed)
        Y_est = Y[:, est_idx]
    else:
        est_idx = None
        Y_est = Y

    C = (prior_spec.C if prior_spec.kind == "jr"
         else mean_pairwise_distance(Xn))
    seeds_lam = [opts.small_seed_factor * C, opts.large_seed_factor * C]
    seed_labels = ["small", "large"]
    base_spec = KernelSpec(family, np.ones(p), alpha=alpha,
                           nugget_ratio=nugget_ratio)

    rounds_diag = []
    n_eval_total = 0
    if method == "exact":
        evaluator = ExactEvaluator(Xn, Y_est, base_spec, trend, prior_spec)
        fun = _xi_objective(
            lambda lam: evaluator.evaluate(lam, need_grad=True), p)
        best, states = optimize(
            fun, [-np.log(lam) for lam in seeds_lam],
            maxiter=opts.maxiter, ftol=opts.ftol, gtol=opts.gtol,
            labels=seed_labels)
        lam_hat = np.exp(-best.x)
        n_eval_total += sum(s.n_eval for s in states)
        rounds_diag.append({
            "scale": "exact",
            "seeds": [s.summary() for s in states],
            "best_value": float(best.value),
            "ranges": lam_hat.tolist(),
        })
        plan = None
    else:
        from .vecchia import VecchiaEvaluator
        lam_hat = None
        plan = None
        for rnd in range(max(1, int(opts.rounds))):
            scale = default_scale(Xn) if lam_hat is None else lam_hat
            order = maximin_order(Xn, scale, seed=opts.anchor_seed)
            plan = nn_condition(Xn, order, m, scale)
            evaluator = VecchiaEvaluator(Xn, Y_est, plan, base_spec, trend,
                                         prior_spec)
            fun = _xi_objective(
                lambda lam: evaluator.evaluate(lam, need_grad=True), p)
            seeds_r = list(seeds_lam)
            labels_r = list(seed_labels)
            if lam_hat is not None:
                seeds_r.append(lam_hat)
                labels_r.append("previous")
            best, states = optimize(
                fun, [-np.log(lam) for lam in seeds_r],
                maxiter=opts.maxiter, ftol=opts.ftol, gtol=opts.gtol,
                labels=labels_r)
            lam_hat = np.exp(-best.x)
            n_eval_total += sum(s.n_eval for s in states)
            rounds_diag.append({
                "scale": np.asarray(scale).tolist(),
                "seeds": [s.summary() for s in states],
                "best_value": float(best.value),
                "ranges": lam_hat.tolist(),
            })

    spec_hat = base_spec.with_ranges(lam_hat)
    if method == "exact" or n <= opts.moment_threshold:
        ev = ExactEvaluator(Xn, Y, spec_hat, trend, prior_spec).evaluate()
        beta = ev.beta
        sigma2 = ev.s2 / (n - q)
    else:
        from .vecchia import VecchiaEvaluator
        ev = VecchiaEvaluator(Xn, Y, plan, spec_hat, trend,
                              prior_spec).evaluate()
        beta = ev.mu.copy()
        sigma2 = ev.s2 / (n - q)

    fit_seconds = time.perf_counter() - t_start
    diagnostics = {
        "method": method,
        "rounds": rounds_diag,
        "objective_evaluations": n_eval_total,
        "fit_seconds": fit_seconds,
        "converged_any": any(s["converged"]
                             for r in rounds_diag for s in r["seeds"]),
        "subsampled_columns": (None if est_idx is None else len(est_idx)),
    }
    return FittedEmulator(spec_hat, trend, beta, sigma2, plan, n - q, method,
                          (m if method == "vecchia" else None), norm, Y,
                          diagnostics)

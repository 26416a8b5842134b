"""Scalable Gaussian-process emulation for computer experiments.

Fits GP surrogates by a nearest-neighbor (Vecchia) approximation of the
marginal posterior, shares one correlation structure across many output
columns, and predicts with Student-t uncertainty. A dense exact path is
included as the small-n reference.
"""

from .design import DesignMatrix, OutputMatrix, lhs_sample, sample_gp
from .errors import (ConditioningError, DegenerateDataError, FitError,
                     InvalidParameterError, NumericalError, ParseError,
                     RankError, ShapeError, VecemError)
from .exactgp import (ExactEvaluator, exact_marginal_neg2log, gls_beta,
                      sigma2_hat)
from .fitting import FitOptions, FittedEmulator, fit, optimize, subsample_outputs
from .kernels import KernelSpec, corr_1d, corr_matrix, cross_corr, parse_family
from .ordering import (ConditioningPlan, default_scale, maximin_order,
                       nn_condition)
from .predict import (PredictiveResult, ppe_weights, predict_exact,
                      predict_nn, relative_rmse, rmse)
from .priors import PriorSpec, jr_prior_neg2log, mean_pairwise_distance
from .trend import TrendBasis
from .vecchia import (VecchiaEvaluator, profiled_neg2log, vecchia_factors,
                      vecchia_marginal_grad, vecchia_marginal_neg2log)

__version__ = "0.1.0"

__all__ = [
    "ConditioningError", "ConditioningPlan", "DegenerateDataError",
    "DesignMatrix", "ExactEvaluator", "FitError", "FitOptions",
    "FittedEmulator", "InvalidParameterError", "KernelSpec",
    "NumericalError", "OutputMatrix", "ParseError", "PredictiveResult",
    "PriorSpec", "RankError", "ShapeError", "TrendBasis", "VecchiaEvaluator",
    "VecemError", "corr_1d", "corr_matrix", "cross_corr", "default_scale",
    "exact_marginal_neg2log", "fit", "gls_beta", "jr_prior_neg2log",
    "lhs_sample", "maximin_order", "mean_pairwise_distance", "nn_condition",
    "optimize", "parse_family", "ppe_weights", "predict_exact", "predict_nn",
    "profiled_neg2log", "relative_rmse", "rmse", "sample_gp", "sigma2_hat",
    "subsample_outputs", "vecchia_factors", "vecchia_marginal_grad",
    "vecchia_marginal_neg2log",
]

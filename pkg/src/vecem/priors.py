"""Range-parameter priors for the marginal posterior.

The default is the jointly robust prior

    pi(lambda) = (sum_l C_l / lambda_l)^a * exp(-b * sum_l C_l / lambda_l)

with a = 0.2, b = n^(-1/p) (a + p) and C_l the mean pairwise absolute
coordinate difference in dimension l. It vanishes fast enough at both
tiny and huge ranges to keep mode estimation away from degenerate
correlation matrices. All code works on the -2 log scale.
"""

import numpy as np

from .design import as_points
from .errors import InvalidParameterError

JR_DEFAULT_A = 0.2


def mean_pairwise_distance(X):
    """Per-dimension mean of |x_il - x_jl| over all pairs i < j.

    Uses the sorted-column identity sum_{i<j} (x_(j) - x_(i)) =
    sum_t x_(t) (2t - n + 1), so the cost is O(n log n) per dimension.
    """
    X = as_points(X)
    n, p = X.shape
    if n < 2:
        raise InvalidParameterError("need at least 2 points for pairwise distances")
    coef = 2.0 * np.arange(n) - (n - 1)
    Xs = np.sort(X, axis=0)
    total = coef @ Xs
    return total / (n * (n - 1) / 2.0)


class PriorSpec:
    """Prior over the range parameters, on the -2 log scale.

    Use PriorSpec.jointly_robust(design) for the default prior or
    PriorSpec.flat() for none (value and gradient identically zero).
    """

    def __init__(self, kind, a=None, b=None, C=None):
        if kind not in ("jr", "none"):
            raise InvalidParameterError(f"unknown prior kind {kind!r}")
        self.kind = kind
        if kind == "jr":
            C = np.atleast_1d(np.asarray(C, dtype=np.float64))
            if a is None or b is None or C is None:
                raise InvalidParameterError("jr prior needs a, b and C")
            if not (np.isfinite(a) and a > 0.0):
                raise InvalidParameterError(f"prior a must be > 0, got {a}")
            if not (np.isfinite(b) and b > 0.0):
                raise InvalidParameterError(f"prior b must be > 0, got {b}")
            if not np.all(np.isfinite(C)) or np.any(C <= 0.0):
                raise InvalidParameterError(f"prior C must be positive, got {C}")
        self.a = a
        self.b = b
        self.C = C

    @classmethod
    def jointly_robust(cls, design, a=JR_DEFAULT_A, b=None):
        """Default jointly robust prior derived from a design.

        C_l is the mean pairwise distance in dimension l and, unless
        given, b = n^(-1/p) (a + p).
        """
        X = as_points(design)
        n, p = X.shape
        C = mean_pairwise_distance(X)
        if b is None:
            b = n ** (-1.0 / p) * (a + p)
        return cls("jr", a=a, b=b, C=C)

    @classmethod
    def flat(cls):
        """No prior: the posterior reduces to the likelihood."""
        return cls("none")

    def neg2log(self, lam):
        """-2 log pi(lambda) up to a constant, with gradient.

        Returns
        -------
        (float, ndarray)
        """
        lam = np.atleast_1d(np.asarray(lam, dtype=np.float64))
        if np.any(lam <= 0.0) or not np.all(np.isfinite(lam)):
            raise InvalidParameterError(f"ranges must be positive, got {lam}")
        if self.kind == "none":
            return 0.0, np.zeros_like(lam)
        if lam.shape != self.C.shape:
            raise InvalidParameterError(
                f"lambda has length {lam.shape[0]}, prior C has {self.C.shape[0]}")
        T = float(np.sum(self.C / lam))
        value = -2.0 * self.a * np.log(T) + 2.0 * self.b * T
        grad = (2.0 * self.a / T - 2.0 * self.b) * self.C / lam ** 2
        return value, grad


def jr_prior_neg2log(lam, prior):
    """Functional form of PriorSpec.neg2log (value, gradient)."""
    return prior.neg2log(lam)

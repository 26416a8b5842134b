"""Mean-function (trend) bases for universal kriging.

A trend basis maps an input point x in R^p to a row h(x) of q regression
functions. The fitted emulator estimates one set of q coefficients per
output column against this shared basis.
"""

import numpy as np

from .errors import InvalidParameterError

_KINDS = ("constant", "linear", "none")


class TrendBasis:
    """Polynomial trend basis of degree 0 or 1, or no trend at all.

    Parameters
    ----------
    kind : str
        "constant" for h(x) = (1,), "linear" for h(x) = (1, x_1, ..., x_p),
        "none" for an empty basis (q = 0, pure zero-mean correlation model).
    """

    def __init__(self, kind="constant"):
        if kind not in _KINDS:
            raise InvalidParameterError(
                f"unknown trend kind {kind!r}; expected one of {_KINDS}")
        self.kind = kind

    def n_functions(self, p):
        """Number of basis functions q for input dimension p."""
        if self.kind == "constant":
            return 1
        if self.kind == "linear":
            return 1 + p
        return 0

    def evaluate(self, X):
        """Evaluate the basis at each row of X, returning an (n, q) array."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        n, p = X.shape
        if self.kind == "constant":
            return np.ones((n, 1))
        if self.kind == "linear":
            return np.hstack([np.ones((n, 1)), X])
        return np.empty((n, 0))

    def __repr__(self):
        return f"TrendBasis({self.kind!r})"

    def __eq__(self, other):
        return isinstance(other, TrendBasis) and other.kind == self.kind

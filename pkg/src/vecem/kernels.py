"""Separable correlation kernels and their range-parameter derivatives.

Each input dimension l gets a one-dimensional correlation c_l(d; lambda_l)
and the full correlation between two points is the product over dimensions,

    c(x, x') = prod_l c_l(|x_l - x'_l|; lambda_l).

Supported families (d >= 0, range lambda > 0):

    pow_exp   c(d) = exp(-(d / lambda)^alpha),  alpha in [1, 2] fixed
    matern32  c(d) = (1 + s) exp(-s),           s = sqrt(3) d / lambda
    matern52  c(d) = (1 + s + s^2/3) exp(-s),   s = sqrt(5) d / lambda

Range derivatives are returned as the ratio dc/dlambda = c * rho(d, lambda)
wherever a whole matrix is differentiated; the ratio forms have denominators
bounded below by 1, so they stay finite even where c underflows to zero.

The matrix builders use a single exponential per entry: the per-dimension
scaled distances are summed first and the polynomial prefactors multiplied,
so a product over p dimensions costs one exp instead of p.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError

SQRT3 = np.sqrt(3.0)
SQRT5 = np.sqrt(5.0)

# Integer codes shared with the compiled factor loops.
POW_EXP = 0
MATERN32 = 1
MATERN52 = 2

_FAMILY_CODES = {"pow_exp": POW_EXP, "matern32": MATERN32, "matern52": MATERN52}


def parse_family(name):
    """Split a family name like "matern32" or "pow_exp:1.5" into (family, alpha).

    The power-exponential family carries its fixed exponent after a colon;
    the Matern families take none. alpha is None when the name does not
    carry an exponent (bare "pow_exp" is legal only where alpha arrives
    separately).
    """
    name = str(name).strip()
    if ":" in name:
        base, _, tail = name.partition(":")
        base = base.strip()
        if base != "pow_exp":
            raise InvalidParameterError(
                f"family {base!r} does not take a parameter (got {name!r})")
        try:
            alpha = float(tail)
        except ValueError:
            raise InvalidParameterError(
                f"could not parse exponent in family name {name!r}") from None
        _check_alpha(alpha)
        return "pow_exp", alpha
    if name == "pow_exp":
        return "pow_exp", None
    if name not in _FAMILY_CODES:
        raise InvalidParameterError(
            f"unknown kernel family {name!r}; expected matern32, matern52 "
            "or pow_exp:<alpha>")
    return name, None


def _check_alpha(alpha):
    if not np.isfinite(alpha) or not (1.0 <= alpha <= 2.0):
        raise InvalidParameterError(
            f"pow_exp exponent must lie in [1, 2], got {alpha}")


@dataclass(eq=False)
class KernelSpec:
    """Kernel family plus its per-dimension ranges and nugget ratio.

    Parameters
    ----------
    family : str
        "pow_exp", "matern32" or "matern52". A combined name such as
        "pow_exp:1.5" is also accepted and sets alpha.
    ranges : array_like
        Positive correlation ranges, one per input dimension.
    alpha : float, optional
        Fixed exponent for pow_exp, in [1, 2]. Ignored by the Matern
        families. alpha is never an optimization variable.
    nugget_ratio : float, optional
        Noise-to-signal variance ratio nu2 added to the correlation
        diagonal, so var(y_i) = sigma2 * (1 + nu2). Default 0.
    """

    family: str
    ranges: np.ndarray
    alpha: float = None
    nugget_ratio: float = 0.0

    def __post_init__(self):
        fam, parsed_alpha = parse_family(self.family)
        self.family = fam
        if parsed_alpha is not None:
            if self.alpha is not None and self.alpha != parsed_alpha:
                raise InvalidParameterError(
                    "alpha given both in the family name and separately")
            self.alpha = parsed_alpha
        if fam == "pow_exp":
            if self.alpha is None:
                raise InvalidParameterError("pow_exp requires alpha in [1, 2]")
            _check_alpha(self.alpha)
        else:
            self.alpha = None
        self.ranges = np.atleast_1d(np.asarray(self.ranges, dtype=np.float64))
        if self.ranges.ndim != 1:
            raise InvalidParameterError("ranges must be a 1-d array")
        if not np.all(np.isfinite(self.ranges)) or np.any(self.ranges <= 0.0):
            raise InvalidParameterError(
                f"ranges must be positive and finite, got {self.ranges}")
        if not np.isfinite(self.nugget_ratio) or self.nugget_ratio < 0.0:
            raise InvalidParameterError(
                f"nugget_ratio must be >= 0, got {self.nugget_ratio}")

    @property
    def name(self):
        """External name, with the pow_exp exponent folded in."""
        if self.family == "pow_exp":
            return f"pow_exp:{self.alpha:g}"
        return self.family

    @property
    def code(self):
        """Integer family code used by the compiled loops."""
        return _FAMILY_CODES[self.family]

    @property
    def ndim(self):
        return self.ranges.shape[0]

    def with_ranges(self, ranges):
        """Copy of this spec with new ranges (same family, alpha, nugget)."""
        return KernelSpec(self.family, ranges, self.alpha, self.nugget_ratio)


def corr_1d(family, d, lam, alpha=None):
    """One-dimensional correlation c(d; lambda) for a single family.

    Parameters
    ----------
    family : str
        Family name; "pow_exp:<alpha>" also accepted.
    d : array_like
        Distances, >= 0 (absolute value is taken).
    lam : float
        Range parameter, > 0.
    alpha : float, optional
        pow_exp exponent if not part of the name.

    Returns
    -------
    ndarray or float with the shape of d.
    """
    fam, parsed = parse_family(family)
    if parsed is not None:
        alpha = parsed
    if not np.isfinite(lam) or lam <= 0.0:
        raise InvalidParameterError(f"range must be positive, got {lam}")
    d = np.abs(np.asarray(d, dtype=np.float64))
    if fam == "pow_exp":
        if alpha is None:
            raise InvalidParameterError("pow_exp requires alpha")
        _check_alpha(alpha)
        return np.exp(-((d / lam) ** alpha))
    if fam == "matern32":
        s = SQRT3 * d / lam
        return (1.0 + s) * np.exp(-s)
    s = SQRT5 * d / lam
    return (1.0 + s + s * s / 3.0) * np.exp(-s)


def corr_1d_dlam(family, d, lam, alpha=None):
    """Derivative of corr_1d with respect to the range lambda.

    Closed forms, with t = d/lambda and s the scaled Matern distance:

        pow_exp   alpha * t^alpha * exp(-t^alpha) / lambda   (0 at d = 0)
        matern32  s^2 exp(-s) / lambda
        matern52  (s^2/3)(1 + s) exp(-s) / lambda
    """
    fam, parsed = parse_family(family)
    if parsed is not None:
        alpha = parsed
    if not np.isfinite(lam) or lam <= 0.0:
        raise InvalidParameterError(f"range must be positive, got {lam}")
    d = np.abs(np.asarray(d, dtype=np.float64))
    if fam == "pow_exp":
        if alpha is None:
            raise InvalidParameterError("pow_exp requires alpha")
        _check_alpha(alpha)
        ta = (d / lam) ** alpha
        val = np.exp(-ta)
        return np.where(val > 0.0, val * alpha * ta / lam, 0.0)
    if fam == "matern32":
        s = SQRT3 * d / lam
        return s * s * np.exp(-s) / lam
    s = SQRT5 * d / lam
    return (s * s / 3.0) * (1.0 + s) * np.exp(-s) / lam


def corr_product(spec, xi, xj):
    """Product correlation between two points under a kernel spec.

    Parameters
    ----------
    spec : KernelSpec
    xi, xj : array_like
        Points of length spec.ndim.

    Returns
    -------
    float
    """
    xi = np.asarray(xi, dtype=np.float64).ravel()
    xj = np.asarray(xj, dtype=np.float64).ravel()
    if xi.shape != xj.shape or xi.shape[0] != spec.ndim:
        raise InvalidParameterError(
            f"points must have length {spec.ndim}, got {xi.shape} and {xj.shape}")
    return float(cross_corr(spec, xi[None, :], xj[None, :])[0, 0])


def corr_product_grad(spec, xi, xj):
    """Product correlation and its gradient in the ranges.

    Returns
    -------
    (float, ndarray)
        The correlation value and the length-p vector of partial
        derivatives with respect to each lambda_l.
    """
    xi = np.asarray(xi, dtype=np.float64).ravel()
    xj = np.asarray(xj, dtype=np.float64).ravel()
    if xi.shape != xj.shape or xi.shape[0] != spec.ndim:
        raise InvalidParameterError(
            f"points must have length {spec.ndim}, got {xi.shape} and {xj.shape}")
    val, grad = cross_corr_grad(spec, xi[None, :], xj[None, :])
    return float(val[0, 0]), grad[:, 0, 0].copy()


def pairwise_absdiff(X1, X2):
    """(p, n1, n2) per-dimension absolute coordinate differences."""
    X1 = np.atleast_2d(np.asarray(X1, dtype=np.float64))
    X2 = np.atleast_2d(np.asarray(X2, dtype=np.float64))
    if X1.shape[1] != X2.shape[1]:
        raise InvalidParameterError(
            f"point sets disagree on dimension: {X1.shape[1]} vs {X2.shape[1]}")
    return np.abs(X1.T[:, :, None] - X2.T[:, None, :])


def corr_from_dists(spec, D):
    """Correlation matrix from precomputed per-dimension distances.

    Parameters
    ----------
    spec : KernelSpec
    D : (p, n1, n2) ndarray
        Per-dimension absolute differences (see pairwise_absdiff).

    Returns
    -------
    (n1, n2) ndarray
    """
    p = spec.ndim
    if D.shape[0] != p:
        raise InvalidParameterError(
            f"distance block has {D.shape[0]} dimensions, spec has {p}")
    lam = spec.ranges
    ssum = np.zeros(D.shape[1:])
    if spec.family == "pow_exp":
        for l in range(p):
            ssum += (D[l] / lam[l]) ** spec.alpha
        return np.exp(-ssum)
    scale = SQRT3 if spec.family == "matern32" else SQRT5
    poly = np.ones(D.shape[1:])
    for l in range(p):
        s = (scale / lam[l]) * D[l]
        ssum += s
        if spec.family == "matern32":
            poly *= 1.0 + s
        else:
            poly *= 1.0 + s + s * s / 3.0
    return poly * np.exp(-ssum)


def corr_grad_from_dists(spec, D):
    """Correlation matrix and range derivatives from distance blocks.

    Returns
    -------
    (C, dC)
        C is (n1, n2); dC is (p, n1, n2) with dC[l] = dC/dlambda_l.
        Computed as C times a bounded per-dimension ratio, so entries
        where C underflows to zero get derivative zero rather than NaN.
    """
    p = spec.ndim
    if D.shape[0] != p:
        raise InvalidParameterError(
            f"distance block has {D.shape[0]} dimensions, spec has {p}")
    lam = spec.ranges
    dC = np.empty_like(D)
    ssum = np.zeros(D.shape[1:])
    if spec.family == "pow_exp":
        for l in range(p):
            ta = (D[l] / lam[l]) ** spec.alpha
            ssum += ta
            dC[l] = spec.alpha * ta / lam[l]
        C = np.exp(-ssum)
        for l in range(p):
            dC[l] = np.where(C > 0.0, C * dC[l], 0.0)
        return C, dC
    scale = SQRT3 if spec.family == "matern32" else SQRT5
    poly = np.ones(D.shape[1:])
    for l in range(p):
        s = (scale / lam[l]) * D[l]
        ssum += s
        if spec.family == "matern32":
            poly *= 1.0 + s
            dC[l] = s * s / (lam[l] * (1.0 + s))
        else:
            w = 1.0 + s + s * s / 3.0
            poly *= w
            dC[l] = (s * s / 3.0) * (1.0 + s) / (lam[l] * w)
    C = poly * np.exp(-ssum)
    for l in range(p):
        dC[l] *= C
    return C, dC


def cross_corr(spec, X1, X2):
    """Dense cross-correlation matrix between two point sets.

    Parameters
    ----------
    spec : KernelSpec
    X1 : (n1, p) array_like
    X2 : (n2, p) array_like

    Returns
    -------
    (n1, n2) ndarray
    """
    X1 = np.atleast_2d(np.asarray(X1, dtype=np.float64))
    X2 = np.atleast_2d(np.asarray(X2, dtype=np.float64))
    p = spec.ndim
    if X1.shape[1] != p or X2.shape[1] != p:
        raise InvalidParameterError(
            f"point sets must have {p} columns, got {X1.shape[1]} and {X2.shape[1]}")
    return corr_from_dists(spec, pairwise_absdiff(X1, X2))


def cross_corr_grad(spec, X1, X2):
    """Cross-correlation matrix together with its range derivatives."""
    X1 = np.atleast_2d(np.asarray(X1, dtype=np.float64))
    X2 = np.atleast_2d(np.asarray(X2, dtype=np.float64))
    p = spec.ndim
    if X1.shape[1] != p or X2.shape[1] != p:
        raise InvalidParameterError(
            f"point sets must have {p} columns, got {X1.shape[1]} and {X2.shape[1]}")
    return corr_grad_from_dists(spec, pairwise_absdiff(X1, X2))


def corr_matrix(spec, X):
    """Symmetric correlation matrix of one point set (unit diagonal)."""
    return cross_corr(spec, X, X)

"""Experiment designs and synthetic training data.

Holds the two thin data containers used across the package (input designs
with their normalization bounds, and multi-output response matrices), a
Latin hypercube generator, and a dense Gaussian-process sampler used to
build synthetic studies.
"""

import numpy as np

from .errors import DegenerateDataError, InvalidParameterError, ShapeError
from .kernels import corr_matrix
from .linalg import chol_with_jitter

DUPLICATE_TOL = 1e-12


class DesignMatrix:
    """An (n, p) input design plus per-dimension normalization bounds.

    Parameters
    ----------
    points : (n, p) array_like
        Input locations, finite.
    bounds : (p, 2) array_like, optional
        Per-dimension (low, high) used to map raw units onto [0, 1].
        Defaults to the column ranges of the points.
    normalized : bool
        True when the points are already expressed in the unit cube
        of the given bounds.
    """

    def __init__(self, points, bounds=None, normalized=False):
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise ShapeError(f"design must be (n, p) with n, p >= 1, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise InvalidParameterError("design contains non-finite entries")
        if bounds is None:
            bounds = np.column_stack([pts.min(axis=0), pts.max(axis=0)])
        bounds = np.asarray(bounds, dtype=np.float64)
        if bounds.shape != (pts.shape[1], 2):
            raise ShapeError(
                f"bounds must be ({pts.shape[1]}, 2), got {bounds.shape}")
        self.points = pts
        self.bounds = bounds
        self.normalized = bool(normalized)

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def p(self):
        return self.points.shape[1]

    def column_spans(self):
        """Per-dimension (high - low) of the bounds."""
        return self.bounds[:, 1] - self.bounds[:, 0]

    def normalize(self):
        """This design mapped onto the unit cube of its bounds.

        Already-normalized designs pass through unchanged. A dimension
        whose bounds coincide admits no scale and raises.
        """
        if self.normalized:
            return self
        span = self.column_spans()
        bad = np.nonzero(span <= 0.0)[0]
        if bad.size:
            raise DegenerateDataError(
                f"input dimension {bad[0]} is constant; cannot normalize")
        pts = (self.points - self.bounds[:, 0]) / span
        return DesignMatrix(pts, self.bounds, normalized=True)

    def map_to_unit(self, X):
        """Map raw-unit points onto this design's unit cube."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.p:
            raise ShapeError(f"points must have {self.p} columns, got {X.shape[1]}")
        span = self.column_spans()
        bad = np.nonzero(span <= 0.0)[0]
        if bad.size:
            raise DegenerateDataError(
                f"input dimension {bad[0]} is constant; cannot normalize")
        return (X - self.bounds[:, 0]) / span

    def validate_distinct(self):
        """Raise if two rows coincide to within 1e-12 in every coordinate."""
        order = np.lexsort(self.points.T[::-1])
        sorted_pts = self.points[order]
        close = np.all(np.abs(np.diff(sorted_pts, axis=0)) <= DUPLICATE_TOL, axis=1)
        hits = np.nonzero(close)[0]
        if hits.size:
            i, j = order[hits[0]], order[hits[0] + 1]
            raise DegenerateDataError(
                f"design rows {min(i, j)} and {max(i, j)} coincide")
        return self


def as_points(design):
    """Accept a DesignMatrix or a plain array and return the (n, p) points."""
    if isinstance(design, DesignMatrix):
        return design.points
    pts = np.atleast_2d(np.asarray(design, dtype=np.float64))
    if pts.ndim != 2:
        raise ShapeError(f"expected an (n, p) design, got shape {pts.shape}")
    return pts


class OutputMatrix:
    """An (n, k) block of simulation outputs, one column per output index."""

    def __init__(self, values):
        vals = np.asarray(values, dtype=np.float64)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.ndim != 2 or vals.shape[0] < 1 or vals.shape[1] < 1:
            raise ShapeError(f"outputs must be (n, k), got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise InvalidParameterError("outputs contain non-finite entries")
        self.values = vals

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def k(self):
        return self.values.shape[1]

    def check_rows(self, design):
        n = as_points(design).shape[0]
        if self.n != n:
            raise ShapeError(
                f"outputs have {self.n} rows but the design has {n}")
        return self


def as_outputs(Y, design=None):
    """Accept an OutputMatrix or array and return the (n, k) values."""
    om = Y if isinstance(Y, OutputMatrix) else OutputMatrix(Y)
    if design is not None:
        om.check_rows(design)
    return om.values


def lhs_sample(n, p, seed=None, bounds=None):
    """Latin hypercube design of n points in p dimensions.

    Each column independently places exactly one point uniformly inside
    each of n equal bins: with a random permutation perm and uniforms u,
    column values are (perm + u) / n. Deterministic for a given seed.

    Parameters
    ----------
    n, p : int
        Points and dimensions, both >= 1.
    seed : int, optional
        Seed for numpy's default_rng.
    bounds : (p, 2) array_like, optional
        Rescale columns onto these (low, high) intervals.

    Returns
    -------
    DesignMatrix
    """
    if n < 1 or p < 1:
        raise InvalidParameterError(f"need n >= 1 and p >= 1, got n={n}, p={p}")
    rng = np.random.default_rng(seed)
    pts = np.empty((n, p))
    for l in range(p):
        perm = rng.permutation(n)
        u = rng.uniform(size=n)
        pts[:, l] = (perm + u) / n
    if bounds is not None:
        bounds = np.asarray(bounds, dtype=np.float64)
        if bounds.shape != (p, 2):
            raise ShapeError(f"bounds must be ({p}, 2), got {bounds.shape}")
        pts = bounds[:, 0] + pts * (bounds[:, 1] - bounds[:, 0])
        return DesignMatrix(pts, bounds, normalized=False)
    return DesignMatrix(pts, np.column_stack([np.zeros(p), np.ones(p)]),
                        normalized=True)


def sample_gp(design, spec, k=1, sigma2=1.0, seed=None, normals=None):
    """Draw k independent output columns from a zero-mean GP on the design.

    The covariance is sigma2 * (R + nu2 I) with R the product correlation
    of the spec and nu2 its nugget ratio. Columns share the correlation
    factor, so a single lower factor L with L L' = sigma2 (R + nu2 I) is
    applied to standard normal draws.

    Parameters
    ----------
    design : DesignMatrix or (n, p) array
    spec : KernelSpec
    k : int
        Number of output columns, >= 1.
    sigma2 : float
        Marginal variance, > 0.
    seed : int, optional
    normals : (n, k) array, optional
        Replaces the standard normal draw (testing hook; all zeros gives
        exactly zero output).

    Returns
    -------
    (n, k) ndarray
    """
    if k < 1:
        raise InvalidParameterError(f"need k >= 1, got {k}")
    if not np.isfinite(sigma2) or sigma2 <= 0.0:
        raise InvalidParameterError(f"sigma2 must be positive, got {sigma2}")
    X = as_points(design)
    n = X.shape[0]
    R = corr_matrix(spec, X)
    if spec.nugget_ratio > 0.0:
        R = R + spec.nugget_ratio * np.eye(n)
    L, _ = chol_with_jitter(R, name="sampling correlation matrix")
    if normals is None:
        normals = np.random.default_rng(seed).standard_normal((n, k))
    else:
        normals = np.asarray(normals, dtype=np.float64)
        if normals.shape != (n, k):
            raise ShapeError(f"normals must be ({n}, {k}), got {normals.shape}")
    return np.sqrt(sigma2) * (L @ normals)

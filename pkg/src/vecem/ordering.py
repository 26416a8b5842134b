"""Distance-based point ordering and conditioning-set construction.

The sequential approximation in the vecchia module conditions each point
on a small set of previously ordered neighbors. Both the ordering (greedy
max-min distance) and the neighbor search run in a scaled metric where
each input dimension is divided by its correlation range, so dimensions
the response barely reacts to carry little weight.

Everything here is deterministic: the first ordered point is the one
nearest the scaled centroid (an optional seed restores a random start),
and all distance ties break toward the lowest index.
"""

import json

import numpy as np
from numba import njit

from .design import DesignMatrix, as_points
from .errors import DegenerateDataError, InvalidParameterError, ShapeError


class ConditioningPlan:
    """Maximin order plus per-point earlier-neighbor sets.

    Attributes
    ----------
    order : (n,) int array
        Permutation of 0..n-1; original row indices in visit order.
    neighbors : (n, m) int array
        Row i holds the conditioning set of ordered position i as
        positions into the ordered sequence, sorted ascending, padded
        with -1 past counts[i].
    counts : (n,) int array
        min(m, i) valid entries per row.
    m : int
        Conditioning-set size cap.
    scale : (p,) array
        Per-dimension divisors defining the metric the plan was built in.
    """

    def __init__(self, order, neighbors, counts, m, scale):
        self.order = np.asarray(order, dtype=np.int64)
        self.neighbors = np.asarray(neighbors, dtype=np.int64)
        self.counts = np.asarray(counts, dtype=np.int64)
        self.m = int(m)
        self.scale = np.asarray(scale, dtype=np.float64)

    @property
    def n(self):
        return self.order.shape[0]

    def neighbor_list(self, i):
        """Conditioning set of ordered position i (positions, ascending)."""
        return self.neighbors[i, :self.counts[i]].copy()

    def to_json(self):
        """JSON text with the order and unpadded neighbor lists."""
        return json.dumps({
            "m": self.m,
            "scale": self.scale.tolist(),
            "order": self.order.tolist(),
            "neighbors": [self.neighbor_list(i).tolist() for i in range(self.n)],
        })

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text)
        order = np.asarray(obj["order"], dtype=np.int64)
        n = order.shape[0]
        m = int(obj["m"])
        neighbors = np.full((n, max(m, 1)), -1, dtype=np.int64)
        counts = np.zeros(n, dtype=np.int64)
        for i, lst in enumerate(obj["neighbors"]):
            counts[i] = len(lst)
            neighbors[i, :len(lst)] = lst
        return cls(order, neighbors, counts, m, np.asarray(obj["scale"]))


def _scaled(design, scale):
    X = as_points(design)
    scale = np.atleast_1d(np.asarray(scale, dtype=np.float64))
    if scale.shape != (X.shape[1],):
        raise ShapeError(
            f"scale must have length {X.shape[1]}, got {scale.shape}")
    if not np.all(np.isfinite(scale)) or np.any(scale <= 0.0):
        raise InvalidParameterError(f"scale entries must be positive, got {scale}")
    return X / scale


def default_scale(design):
    """Per-dimension column range divided by five.

    Raises for a constant column, which would otherwise produce a zero
    divisor in the scaled metric.
    """
    X = as_points(design)
    span = X.max(axis=0) - X.min(axis=0)
    bad = np.nonzero(span <= 0.0)[0]
    if bad.size:
        raise DegenerateDataError(
            f"input dimension {bad[0]} is constant; no scale can be derived")
    return span / 5.0


@njit(cache=True)
def _greedy_maximin(Xs, start):
    n, p = Xs.shape
    order = np.empty(n, np.int64)
    chosen = np.zeros(n, np.bool_)
    dmin = np.full(n, np.inf)
    order[0] = start
    chosen[start] = True
    for t in range(1, n):
        last = order[t - 1]
        for j in range(n):
            if not chosen[j]:
                d = 0.0
                for l in range(p):
                    diff = Xs[j, l] - Xs[last, l]
                    d += diff * diff
                if d < dmin[j]:
                    dmin[j] = d
        best = -1
        bestd = -1.0
        for j in range(n):
            if not chosen[j] and dmin[j] > bestd:
                bestd = dmin[j]
                best = j
        order[t] = best
        chosen[best] = True
    return order


def maximin_order(design, scale=None, seed=None):
    """Greedy max-min distance ordering in the scaled metric.

    The first point is the one nearest the scaled centroid (lowest index
    on ties); passing a seed instead draws the first point uniformly.
    Every later point maximizes its minimum scaled distance to the points
    already ordered, ties again toward the lowest original index.

    Parameters
    ----------
    design : DesignMatrix or (n, p) array
    scale : (p,) array, optional
        Metric divisors; defaults to default_scale(design).
    seed : int, optional
        Random first point (reproducible for a fixed seed).

    Returns
    -------
    (n,) int64 array, a permutation of 0..n-1.
    """
    if scale is None:
        scale = default_scale(design)
    Xs = np.ascontiguousarray(_scaled(design, scale))
    n = Xs.shape[0]
    if n == 1:
        return np.zeros(1, dtype=np.int64)
    if seed is None:
        centroid = Xs.mean(axis=0)
        d2 = np.sum((Xs - centroid) ** 2, axis=1)
        start = int(np.argmin(d2))
    else:
        start = int(np.random.default_rng(seed).integers(n))
    return _greedy_maximin(Xs, start)


@njit(cache=True)
def _nn_earlier(Xo, m, nbr, cnt):
    # Bounded worst-at-root heap per point, keyed lexicographically by
    # (distance, ordered index) so ties settle on the earlier position.
    n, p = Xo.shape
    hd = np.empty(m)
    hj = np.empty(m, np.int64)
    for i in range(n):
        cap = min(m, i)
        cnt[i] = cap
        if cap == 0:
            continue
        size = 0
        for j in range(i):
            d = 0.0
            for l in range(p):
                diff = Xo[i, l] - Xo[j, l]
                d += diff * diff
            if size < cap:
                pos = size
                hd[pos] = d
                hj[pos] = j
                size += 1
                while pos > 0:
                    par = (pos - 1) // 2
                    if hd[pos] > hd[par] or (hd[pos] == hd[par] and hj[pos] > hj[par]):
                        hd[pos], hd[par] = hd[par], hd[pos]
                        hj[pos], hj[par] = hj[par], hj[pos]
                        pos = par
                    else:
                        break
            elif d < hd[0] or (d == hd[0] and j < hj[0]):
                hd[0] = d
                hj[0] = j
                pos = 0
                while True:
                    left = 2 * pos + 1
                    right = left + 1
                    worst = pos
                    if left < size and (hd[left] > hd[worst] or
                                        (hd[left] == hd[worst] and hj[left] > hj[worst])):
                        worst = left
                    if right < size and (hd[right] > hd[worst] or
                                         (hd[right] == hd[worst] and hj[right] > hj[worst])):
                        worst = right
                    if worst == pos:
                        break
                    hd[pos], hd[worst] = hd[worst], hd[pos]
                    hj[pos], hj[worst] = hj[worst], hj[pos]
                    pos = worst
        sel = np.sort(hj[:size])
        for t in range(size):
            nbr[i, t] = sel[t]
    return nbr


def nn_condition(design, order, m, scale=None):
    """Nearest earlier-ordered neighbor sets for every point.

    Parameters
    ----------
    design : DesignMatrix or (n, p) array
    order : (n,) int array
        Permutation from maximin_order (or any permutation of 0..n-1).
    m : int
        Conditioning-set size, 1 <= m <= n-1.
    scale : (p,) array, optional
        Metric divisors; defaults to default_scale(design).

    Returns
    -------
    ConditioningPlan
        Neighbor sets hold the exact min(m, i) nearest earlier-ordered
        points in the scaled metric, stored ascending by ordered position.
    """
    if scale is None:
        scale = default_scale(design)
    Xs = _scaled(design, scale)
    n = Xs.shape[0]
    order = np.asarray(order, dtype=np.int64)
    if order.shape != (n,) or not np.array_equal(np.sort(order), np.arange(n)):
        raise InvalidParameterError("order must be a permutation of 0..n-1")
    m = int(m)
    if m < 1:
        raise InvalidParameterError(f"conditioning size m must be >= 1, got {m}")
    if m > n - 1:
        raise InvalidParameterError(
            f"conditioning size m must be <= n-1 = {n - 1}, got {m}")
    Xo = np.ascontiguousarray(Xs[order])
    nbr = np.full((n, m), -1, dtype=np.int64)
    cnt = np.zeros(n, dtype=np.int64)
    _nn_earlier(Xo, m, nbr, cnt)
    return ConditioningPlan(order, nbr, cnt, m,
                            np.atleast_1d(np.asarray(scale, dtype=np.float64)))


def brute_force_neighbors(design, order, m, scale=None):
    """Reference O(n^2 log n) neighbor search used as a test oracle."""
    if scale is None:
        scale = default_scale(design)
    Xs = _scaled(design, scale)
    order = np.asarray(order, dtype=np.int64)
    Xo = Xs[order]
    n = Xo.shape[0]
    out = []
    for i in range(n):
        if i == 0:
            out.append(np.empty(0, dtype=np.int64))
            continue
        d2 = np.sum((Xo[:i] - Xo[i]) ** 2, axis=1)
        sel = np.lexsort((np.arange(i), d2))[:min(m, i)]
        out.append(np.sort(sel))
    return out

"""Symmetric U-statistic kernels and exact tuple-sum algorithms.

A kernel acts on label values. Scalar kernels take 1-d arrays; the Kendall
kernel takes values encoded as ``(a, b)`` pairs, i.e. arrays of shape
``(n, 2)``. Every kernel function is vectorized: it receives ``degree``
arrays of equal leading length and returns one float per row.

Tuple sums ``sum_{i1<...<ir} w_i1 ... w_ir h(y_i1, ..., y_ir)`` are the
workhorse of the estimators. :func:`tuple_sum` dispatches to an exact
O(n log n) routine when the kernel has one and otherwise enumerates tuples
in fixed row blocks, combining block totals with :func:`math.fsum` so the
result does not depend on how the work is split.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Callable

import numpy as np

from .errors import ArgumentError, DomainError

MAX_DEGREE = 3
FAST_PATHS = ("gini", "kendall", "wilcoxon-pair", "third-moment", "none")

# rows per block in the brute-force enumeration
_BLOCK = 256


@dataclass(frozen=True)
class KernelSpec:
    name: str
    degree: int
    func: Callable[..., np.ndarray]
    fast_path: str = "none"
    value_dim: int = 1

    def __post_init__(self):
        if not 1 <= self.degree <= MAX_DEGREE:
            raise ArgumentError(
                f"kernel degree must be in 1..{MAX_DEGREE}, got {self.degree}")
        if self.fast_path not in FAST_PATHS:
            raise ArgumentError(f"unknown fast path {self.fast_path!r}")
        if self.value_dim not in (1, 2):
            raise ArgumentError("value_dim must be 1 or 2")

    def __call__(self, *args):
        return self.func(*args)


# -- kernel functions -------------------------------------------------------

def _gini(a, b):
    return np.abs(a - b)


def _kendall(a, b):
    return np.sign((a[..., 0] - b[..., 0]) * (a[..., 1] - b[..., 1]))


def _wilcoxon_pair(a, b):
    return (a + b > 0).astype(float)


def _mean(a):
    return np.asarray(a, dtype=float) * 1.0


def _third_central_moment(a, b, c):
    # sorting the arguments makes the float evaluation order, and hence the
    # result, identical under every permutation
    s = np.sort(np.stack(np.broadcast_arrays(a, b, c)), axis=0)
    x, y, z = s[0], s[1], s[2]
    return (x - 2 * y + z) * (x + y - 2 * z) * (2 * x - y - z) / 6.0


_BUILTINS = {
    "gini": dict(degree=2, func=_gini, fast_path="gini"),
    "kendall": dict(degree=2, func=_kendall, fast_path="kendall", value_dim=2),
    "wilcoxon-pair": dict(degree=2, func=_wilcoxon_pair, fast_path="wilcoxon-pair"),
    "third-central-moment": dict(degree=3, func=_third_central_moment,
                                 fast_path="third-moment"),
    "mean": dict(degree=1, func=_mean),
}

KERNEL_NAMES = tuple(_BUILTINS)


def builtin_kernel(name: str) -> KernelSpec:
    """Return one of the shipped kernels by name.

    ``gini`` is |y1 - y2|, ``kendall`` is sign((a1 - a2)(b1 - b2)) on pairs,
    ``wilcoxon-pair`` is 1{d1 + d2 > 0}, ``mean`` is the identity (degree 1)
    and ``third-central-moment`` is the degree-3 kernel

        (1/3) sum y_i^3 - (1/2) sum_{i != j} y_i^2 y_j + 2 y1 y2 y3

    whose expectation is E[(Y - EY)^3].
    """
    try:
        params = _BUILTINS[name]
    except KeyError:
        raise ArgumentError(
            f"unknown kernel {name!r}; expected one of {', '.join(KERNEL_NAMES)}"
        ) from None
    return KernelSpec(name=name, **params)


def as_values(values, kernel: KernelSpec) -> np.ndarray:
    """Coerce label values to the array shape the kernel expects."""
    arr = np.asarray(values, dtype=float)
    if kernel.value_dim == 1:
        if arr.ndim != 1:
            arr = arr.reshape(-1)
    else:
        if arr.ndim == 1 and arr.shape[0] == kernel.value_dim:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2 or arr.shape[1] != kernel.value_dim:
            raise ArgumentError(
                f"kernel {kernel.name!r} expects values of shape (n, {kernel.value_dim})")
    return arr


def eval_kernel(kernel: KernelSpec, tup) -> float:
    """Evaluate ``kernel`` on a single r-tuple of label values."""
    if len(tup) != kernel.degree:
        raise ArgumentError(
            f"kernel {kernel.name!r} has degree {kernel.degree}, got {len(tup)} values")
    args = []
    for v in tup:
        a = np.asarray(v, dtype=float)
        if not np.all(np.isfinite(a)):
            raise DomainError("kernel arguments must be finite")
        if kernel.value_dim == 1:
            if a.ndim != 0:
                raise ArgumentError(f"kernel {kernel.name!r} takes scalar values")
            args.append(a.reshape(1))
        else:
            if a.shape != (kernel.value_dim,):
                raise ArgumentError(
                    f"kernel {kernel.name!r} takes values of length {kernel.value_dim}")
            args.append(a.reshape(1, -1))
    return float(kernel.func(*args)[0])


# -- fast exact pairwise sums ----------------------------------------------

def _check_min(n, what):
    if n < 2:
        raise ArgumentError(f"{what} needs at least 2 values, got {n}")


def fast_gini_pairwise_sum(values) -> float:
    """Sum of |y_i - y_j| over pairs i < j in O(n log n).

    After sorting, the j-th order statistic (1-indexed) enters with
    coefficient 2j - n - 1. Those coefficients sum to zero, so values are
    centered first to limit cancellation.
    """
    y = np.asarray(values, dtype=float).reshape(-1)
    n = y.size
    _check_min(n, "gini sum")
    y = np.sort(y - np.median(y))
    coef = 2.0 * np.arange(1, n + 1) - n - 1.0
    return float(np.sum(coef * y))


def _weighted_gini_sum(y, w):
    order = np.argsort(y, kind="stable")
    y = y[order] - np.median(y)
    w = w[order]
    # sum_j w_j (y_j W_{<j} - S_{<j})
    cw = np.cumsum(w) - w
    cs = np.cumsum(w * y) - w * y
    return math.fsum(w * (y * cw - cs))


def _dense_ranks(x):
    """Integer ranks 0..k-1 with ties sharing a rank."""
    _, inv = np.unique(x, return_inverse=True)
    return inv.reshape(-1).astype(np.int64)


def count_inversions(ranks) -> int:
    """Number of pairs i < j with ranks[i] > ranks[j] (strictly).

    Bottom-up merge sort. At width w every block of w entries is already
    sorted; for each pair of neighbouring blocks the entries of the right
    block are located in the left block with a single vectorized binary
    search. Keys ``pair_id * K + rank`` keep all pairs in one sorted array so
    each level costs one searchsorted and one (run-aware, stable) merge.
    """
    r = np.asarray(ranks, dtype=np.int64).reshape(-1)
    n = r.size
    if n < 2:
        return 0
    r = r - r.min()
    span = int(r.max()) + 1
    idx = np.arange(n)
    arr = r.copy()
    total = 0
    width = 1
    while width < n:
        pair = idx // (2 * width)
        is_left = (idx // width) % 2 == 0
        keys = pair * span + arr
        left_keys = keys[is_left]
        right = ~is_left
        if right.any():
            rk = keys[right]
            rp = pair[right]
            # entries of the left block of pair p that are <= the right value
            le = np.searchsorted(left_keys, rk, side="right")
            stop = np.searchsorted(left_keys, (rp + 1) * span, side="left")
            total += int(np.sum(stop - le))
            keys = np.sort(keys, kind="stable")
            arr = keys - pair * span
        width *= 2
    return total


def _tied_pairs(same_as_prev):
    """Pairs within runs, given flags marking entries equal to their predecessor."""
    if not same_as_prev.any():
        return 0
    edges = np.flatnonzero(np.diff(np.concatenate(([0], same_as_prev.astype(np.int8), [0]))))
    runs = (edges[1::2] - edges[::2]) + 1
    return int(np.sum(runs * (runs - 1) // 2))


def fast_kendall_sum(pairs) -> float:
    """Sum of sign((a_i - a_j)(b_i - b_j)) over i < j in O(n log n).

    Concordant minus discordant pairs; pairs tied in either coordinate
    contribute 0. Sort by (a, b), count strict inversions of b with merge
    sort, and correct for ties:

        C - D = n0 - n_a - n_b + n_ab - 2 * inversions
    """
    p = np.asarray(pairs, dtype=float)
    if p.ndim != 2 or p.shape[1] != 2:
        raise ArgumentError("kendall sum expects an (n, 2) array of pairs")
    n = p.shape[0]
    _check_min(n, "kendall sum")
    a, b = p[:, 0], p[:, 1]
    order = np.lexsort((b, a))
    a_s, b_s = a[order], b[order]
    rb = _dense_ranks(b)[order]
    same_a = a_s[1:] == a_s[:-1]
    same_ab = same_a & (b_s[1:] == b_s[:-1])
    b_sorted = np.sort(b)

    n0 = n * (n - 1) // 2
    n_a, n_ab = _tied_pairs(same_a), _tied_pairs(same_ab)
    n_b = _tied_pairs(b_sorted[1:] == b_sorted[:-1])
    swaps = count_inversions(rb)
    return float(n0 - n_a - n_b + n_ab - 2 * swaps)


def fast_wilcoxon_pair_sum(values, weights=None) -> float:
    """(Weighted) count of pairs i < j with d_i + d_j > 0, by sort + search."""
    d = np.asarray(values, dtype=float).reshape(-1)
    n = d.size
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    order = np.argsort(d, kind="stable")
    ds, ws = d[order], w[order]
    # weight of partners j with d_j > -d_i, over all ordered (i, j) incl. i == j
    tail = np.concatenate([np.cumsum(ws[::-1])[::-1], [0.0]])
    pos = np.searchsorted(ds, -d, side="right")
    ordered = math.fsum(w * tail[pos])
    self_pairs = math.fsum(w[d > 0] ** 2)
    return (ordered - self_pairs) / 2.0


def _distinct_triple_sum(u, v, z):
    """sum over ordered triples of distinct indices of u_i v_j z_k."""
    su, sv, sz = u.sum(), v.sum(), z.sum()
    return (su * sv * sz - np.sum(u * v) * sz - np.sum(u * z) * sv
            - np.sum(v * z) * su + 2.0 * np.sum(u * v * z))


def _third_moment_sum(y, w):
    # kernel is shift invariant; center for conditioning
    y = y - np.sum(w * y) / np.sum(w)
    a = _distinct_triple_sum(w * y ** 3, w, w)
    b = _distinct_triple_sum(w * y ** 2, w * y, w)
    c = _distinct_triple_sum(w * y, w * y, w * y)
    return float((a - 3.0 * b + 2.0 * c) / 6.0)


# -- generic enumeration ---------------------------------------------------

def naive_tuple_sum(values, kernel: KernelSpec, weights=None) -> float:
    """Brute-force sum over all r-subsets (the reference for fast paths).

    Cost is O(n^r); rows are processed in fixed blocks and the block totals
    are combined with fsum, so the result is independent of block order.
    """
    y = as_values(values, kernel)
    n = y.shape[0]
    r = kernel.degree
    w = None if weights is None else np.asarray(weights, dtype=float).reshape(-1)
    if n < r:
        raise ArgumentError(f"need at least {r} values, got {n}")
    if r == 1:
        hv = kernel.func(y)
        return math.fsum(hv if w is None else w * hv)
    parts = []
    if r == 2:
        for i in range(n - 1):
            hv = kernel.func(y[i:i + 1], y[i + 1:])
            if w is not None:
                hv = w[i] * w[i + 1:] * hv
            parts.append(float(np.sum(hv)))
        return math.fsum(parts)
    # r == 3: fix the smallest index, enumerate the remaining pairs
    for i in range(n - 2):
        jj, kk = np.triu_indices(n - i - 1, k=1)
        jj = jj + i + 1
        kk = kk + i + 1
        for s in range(0, jj.size, _BLOCK * _BLOCK):
            j, k = jj[s:s + _BLOCK * _BLOCK], kk[s:s + _BLOCK * _BLOCK]
            hv = kernel.func(y[i:i + 1], y[j], y[k])
            if w is not None:
                hv = w[i] * w[j] * w[k] * hv
            parts.append(float(np.sum(hv)))
    return math.fsum(parts)


def tuple_sum(values, kernel: KernelSpec, weights=None) -> float:
    """Sum over all r-subsets of ``prod(weights) * h``, fast when possible."""
    y = as_values(values, kernel)
    n = y.shape[0]
    r = kernel.degree
    if n < r:
        raise ArgumentError(f"need at least {r} values for kernel {kernel.name!r}, got {n}")
    w = None if weights is None else np.asarray(weights, dtype=float).reshape(-1)
    if w is not None and w.shape[0] != n:
        raise ArgumentError("weights and values differ in length")
    fp = kernel.fast_path
    if fp == "gini":
        return fast_gini_pairwise_sum(y) if w is None else _weighted_gini_sum(y, w)
    if fp == "kendall" and w is None:
        return fast_kendall_sum(y)
    if fp == "wilcoxon-pair":
        return fast_wilcoxon_pair_sum(y, w)
    if fp == "third-moment":
        return _third_moment_sum(y, np.ones(n) if w is None else w)
    return naive_tuple_sum(y, kernel, w)


def elementary_symmetric(weights, r: int) -> float:
    """e_r(w): the sum over r-subsets of the product of weights (r <= 3)."""
    w = np.asarray(weights, dtype=float).reshape(-1)
    if r == 0:
        return 1.0
    if w.size < r:
        return 0.0
    p1, p2, p3 = np.sum(w), np.sum(w ** 2), np.sum(w ** 3)
    if r == 1:
        return float(p1)
    if r == 2:
        return float((p1 * p1 - p2) / 2.0)
    if r == 3:
        return float((p1 ** 3 - 3.0 * p1 * p2 + 2.0 * p3) / 6.0)
    raise ArgumentError(f"degree {r} exceeds {MAX_DEGREE}")


def all_tuples(n: int, r: int):
    """Index tuples of all r-subsets of range(n), for small-n oracles."""
    return combinations(range(n), r)


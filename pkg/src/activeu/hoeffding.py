"""First-order Hoeffding projections estimated from a pilot sample.

The projection of a degree-r kernel at a point y is estimated by averaging
h(y, ...) over every (r-1)-subset of the pilot values. For r = 2 that is the
plain mean of h(y, Y'_k); the built-in kernels have closed forms that avoid
materializing the pilot-by-query matrix.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from math import comb

import numpy as np

from .errors import ArgumentError
from .kernels import KernelSpec, as_values

# largest pilot used for projections; larger pilots are subsampled by seed
MAX_PILOT = 2000
DEGENERACY_THRESHOLD = 1e-10

_CHUNK = 2048


@dataclass(frozen=True, eq=False)
class ProjectionEvaluator:
    pilot_values: np.ndarray
    kernel: KernelSpec
    kind: str = "true-label"

    def __post_init__(self):
        if self.kind not in ("true-label", "prediction"):
            raise ArgumentError(f"unknown projection kind {self.kind!r}")
        self.pilot_values.setflags(write=False)

    @property
    def n_pilot(self) -> int:
        return int(self.pilot_values.shape[0])

    def __call__(self, y) -> np.ndarray:
        y = as_values(y, self.kernel)
        k = self.kernel
        if k.degree == 1:
            return np.asarray(k.func(y), dtype=float)
        if k.degree == 2:
            return _pair_projection(y, self.pilot_values, k)
        return _triple_projection(y, self.pilot_values, k)


def estimate_h1(pilot, kernel: KernelSpec, kind: str = "true-label",
                seed: int = 0, max_pilot: int = MAX_PILOT) -> ProjectionEvaluator:
    """Projection evaluator built from pilot label values (or predictions)."""
    vals = np.array(as_values(pilot, kernel))
    if vals.shape[0] < kernel.degree - 1 or vals.shape[0] == 0:
        raise ArgumentError(
            f"pilot of size {vals.shape[0]} too small for degree {kernel.degree}")
    if vals.shape[0] > max_pilot:
        keep = np.sort(np.random.default_rng(seed).choice(vals.shape[0], max_pilot,
                                                          replace=False))
        vals = vals[keep]
    return ProjectionEvaluator(pilot_values=vals, kernel=kernel, kind=kind)


def _pair_projection(y, pilot, kernel):
    m = pilot.shape[0]
    fp = kernel.fast_path
    if fp == "gini":
        # mean |y - p_k| = (y*(2c - m) + S_total - 2 S_below) / m
        ps = np.sort(pilot)
        csum = np.concatenate(([0.0], np.cumsum(ps)))
        c = np.searchsorted(ps, y, side="right")
        below = csum[c]
        return (y * (2 * c - m) + csum[-1] - 2 * below) / m
    if fp == "wilcoxon-pair":
        ps = np.sort(pilot)
        return (m - np.searchsorted(ps, -y, side="right")) / m
    out = np.empty(y.shape[0])
    for s in range(0, y.shape[0], _CHUNK):
        blk = y[s:s + _CHUNK]
        hv = kernel.func(blk[:, None], pilot[None, :])
        out[s:s + _CHUNK] = hv.mean(axis=1)
    return out


def _triple_projection(y, pilot, kernel):
    m = pilot.shape[0]
    pairs = comb(m, 2)
    if kernel.fast_path == "third-moment":
        # closed form of the pair average of h(y, b, c) via power sums
        s1, s2, s3 = pilot.sum(), np.sum(pilot ** 2), np.sum(pilot ** 3)
        total = (pairs * y ** 3 / 3.0 + (m - 1) * s3 / 3.0
                 - 0.5 * (y ** 2 * (m - 1) * s1 + y * (m - 1) * s2 + (s2 * s1 - s3))
                 + y * (s1 * s1 - s2))
        return total / pairs
    j, k = np.triu_indices(m, k=1)
    out = np.empty(y.shape[0])
    for i in range(y.shape[0]):
        out[i] = np.mean(kernel.func(y[i:i + 1], pilot[j], pilot[k]))
    return out


def degeneracy_check(evaluator: ProjectionEvaluator, points) -> float:
    """Sample variance of the estimated projection over ``points``.

    Values below 1e-10 trigger a RuntimeWarning; estimation continues since
    the AIPW estimator stays defined in the degenerate case.
    """
    vals = evaluator(points)
    if vals.shape[0] < 2:
        raise ArgumentError("degeneracy check needs at least 2 points")
    var = float(np.var(vals, ddof=1))
    if var < DEGENERACY_THRESHOLD:
        warnings.warn(
            f"estimated projection variance {var:.3g} is below "
            f"{DEGENERACY_THRESHOLD:g}; the U-statistic looks degenerate",
            RuntimeWarning, stacklevel=2)
    return var

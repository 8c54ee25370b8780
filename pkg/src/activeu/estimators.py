"""Classical, IPW, AIPW and normalized AIPW U-statistics.

All active estimators read an :class:`ActiveSample`: predictions for every
unit, inclusion probabilities, the uniforms that decided labeling, and the
labels of the queried units only. Correction terms are summed over labeled
tuples alone, which equals the full sum weighted by xi-products but costs
O(n_lab^r) instead of O(n^r).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb
from typing import Optional

import numpy as np

from .errors import ArgumentError, EstimationError
from .kernels import KernelSpec, as_values, elementary_symmetric, tuple_sum


@dataclass(frozen=True, eq=False)
class ActiveSample:
    """One realization of the labeling design.

    ``labels`` holds true labels for labeled units and NaN elsewhere; use
    :meth:`labels_at` or :attr:`labeled_labels` rather than indexing it, so
    that reading an unqueried label is caught.
    """

    predictions: np.ndarray
    probs: np.ndarray
    uniforms: np.ndarray
    labeled: np.ndarray
    labels: np.ndarray
    budget: float
    covariates: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.probs.shape[0]
        for name in ("predictions", "uniforms", "labeled", "labels"):
            arr = getattr(self, name)
            if arr is not None and arr.shape[0] != n:
                raise ArgumentError(f"{name} has length {arr.shape[0]}, expected {n}")
        if not np.all((self.probs > 0) & (self.probs <= 1)):
            raise ArgumentError("sampling probabilities must lie in (0, 1]")
        if not np.array_equal(self.labeled, self.uniforms <= self.probs):
            raise ArgumentError("labeled indicators disagree with uniforms <= probs")
        for arr in (self.predictions, self.probs, self.uniforms, self.labels,
                    self.covariates):
            if arr is not None:
                arr.setflags(write=False)

    @classmethod
    def draw(cls, labels, probs, uniforms, predictions=None, budget=None,
             covariates=None, meta=None):
        """Build a sample from full labels, keeping only the queried ones.

        ``labels`` may be a full-length array (simulation) or any object
        supporting integer-array indexing; it is read at labeled units only.
        """
        probs = np.asarray(probs, dtype=float).reshape(-1)
        uniforms = np.asarray(uniforms, dtype=float).reshape(-1)
        n = probs.shape[0]
        labeled = uniforms <= probs
        idx = np.flatnonzero(labeled)
        full = np.asarray(labels, dtype=float)
        masked = np.full(full.shape, np.nan)
        masked[idx] = full[idx]
        if predictions is None:
            predictions = np.full(full.shape, np.nan)
        predictions = np.array(predictions, dtype=float)
        if budget is None:
            budget = float(np.sum(probs))
        return cls(predictions=predictions, probs=probs.copy(),
                   uniforms=uniforms.copy(), labeled=labeled, labels=masked,
                   budget=float(budget),
                   covariates=None if covariates is None else np.array(covariates, dtype=float),
                   meta=dict(meta or {}))

    @property
    def n(self) -> int:
        return int(self.probs.shape[0])

    @property
    def n_lab(self) -> int:
        return int(np.sum(self.labeled))

    @property
    def labeled_index(self) -> np.ndarray:
        return np.flatnonzero(self.labeled)

    @property
    def labeled_labels(self) -> np.ndarray:
        return self.labels[self.labeled]

    def labels_at(self, idx) -> np.ndarray:
        idx = np.asarray(idx)
        sel = self.labeled[idx]
        if not np.all(sel):
            bad = np.atleast_1d(idx)[~np.atleast_1d(sel)]
            raise ArgumentError(f"labels requested for unlabeled units {bad[:5].tolist()}")
        return self.labels[idx]

    def has_predictions(self) -> bool:
        return bool(np.all(np.isfinite(self.predictions)))

    def with_predictions(self, predictions) -> "ActiveSample":
        """Same design and labels, different prediction vector."""
        return ActiveSample(predictions=np.array(predictions, dtype=float),
                            probs=self.probs, uniforms=self.uniforms,
                            labeled=self.labeled, labels=self.labels,
                            budget=self.budget, covariates=self.covariates,
                            meta=self.meta)


@dataclass(frozen=True)
class EstimateReport:
    estimate: float
    sigma2_hat: float
    ci_low: float
    ci_high: float
    n_lab: int
    estimator_kind: str
    policy_kind: str = "custom"
    flags: tuple = ()

    def as_dict(self):
        return {
            "estimate": self.estimate, "sigma2_hat": self.sigma2_hat,
            "ci_low": self.ci_low, "ci_high": self.ci_high, "n_lab": self.n_lab,
            "estimator_kind": self.estimator_kind, "policy_kind": self.policy_kind,
            "flags": list(self.flags),
        }


def u_statistic(values, kernel: KernelSpec) -> float:
    """Classical U-statistic: the kernel averaged over all r-subsets."""
    y = as_values(values, kernel)
    n, r = y.shape[0], kernel.degree
    if n < r:
        raise ArgumentError(f"U-statistic of degree {r} needs n >= {r}, got {n}")
    return tuple_sum(y, kernel) / comb(n, r)


def _labeled_parts(sample: ActiveSample, kernel: KernelSpec):
    r = kernel.degree
    if sample.n_lab < r:
        raise EstimationError(
            f"insufficient labels: {sample.n_lab} labeled units, kernel degree {r}",
            n_lab=sample.n_lab)
    idx = sample.labeled_index
    w = 1.0 / sample.probs[idx]
    return idx, w


def _require_predictions(sample: ActiveSample, kernel: KernelSpec):
    if not sample.has_predictions():
        raise ArgumentError("AIPW estimators need a prediction for every unit")
    return as_values(sample.predictions, kernel)


def ipw_u(sample: ActiveSample, kernel: KernelSpec) -> float:
    """Inverse-probability-weighted U-statistic over labeled tuples."""
    idx, w = _labeled_parts(sample, kernel)
    y = as_values(sample.labels_at(idx), kernel)
    return tuple_sum(y, kernel, w) / comb(sample.n, kernel.degree)


def n_hat(sample: ActiveSample, r: int) -> float:
    """Horvitz-Thompson count of r-tuples: sum over labeled tuples of
    prod(1/pi). Unbiased for C(n, r)."""
    if not 1 <= r <= 3:
        raise ArgumentError(f"degree must be in 1..3, got {r}")
    return elementary_symmetric(1.0 / sample.probs[sample.labeled], r)


def _plugin_and_correction(sample, kernel):
    yhat = _require_predictions(sample, kernel)
    idx, w = _labeled_parts(sample, kernel)
    plug = tuple_sum(yhat, kernel) / comb(sample.n, kernel.degree)
    y = as_values(sample.labels_at(idx), kernel)
    corr = tuple_sum(y, kernel, w) - tuple_sum(yhat[idx], kernel, w)
    return plug, corr


def aipw_u(sample: ActiveSample, kernel: KernelSpec) -> float:
    """Plug-in U-statistic on predictions plus the IPW-weighted correction
    h(Y tuple) - h(Yhat tuple) over labeled tuples, both scaled by C(n, r)."""
    plug, corr = _plugin_and_correction(sample, kernel)
    return plug + corr / comb(sample.n, kernel.degree)


def normalized_aipw_u(sample: ActiveSample, kernel: KernelSpec) -> float:
    """AIPW U-statistic with the correction divided by ``n_hat`` instead of
    C(n, r) (Hajek normalization)."""
    plug, corr = _plugin_and_correction(sample, kernel)
    nh = n_hat(sample, kernel.degree)
    if nh <= 0:
        raise EstimationError("no labeled tuple: n_hat is zero")
    return plug + corr / nh


def classical_u(sample: ActiveSample, kernel: KernelSpec) -> float:
    """Hajek-normalized IPW U-statistic on labels alone (no predictions).

    This is the 'classical' benchmark: IPW with the denominator C(n, r)
    replaced by ``n_hat``.
    """
    idx, w = _labeled_parts(sample, kernel)
    y = as_values(sample.labels_at(idx), kernel)
    nh = n_hat(sample, kernel.degree)
    if nh <= 0:
        raise EstimationError("no labeled tuple: n_hat is zero")
    return tuple_sum(y, kernel, w) / nh


ESTIMATORS = {
    "classical": classical_u,
    "ipw": ipw_u,
    "aipw": aipw_u,
    "aipw-normalized": normalized_aipw_u,
}


def point_estimate(sample: ActiveSample, kernel: KernelSpec, kind: str) -> float:
    try:
        fn = ESTIMATORS[kind]
    except KeyError:
        raise ArgumentError(f"unknown estimator {kind!r}") from None
    return fn(sample, kernel)

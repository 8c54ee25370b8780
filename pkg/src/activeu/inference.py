"""Variance estimation and normal confidence intervals for active U-statistics.

sigma2 = var1 + var2, where var1 = r^2 * (m2 - m1^2) is the Horvitz-Thompson
variance of the first-order projection and var2 adds the subsampling term
(r^2 / n) * sum_i (xi_i / pi_i) * e_i^2 * (1 / pi_i - 1) with
e_i = h1(Y_i) - h1_mu(Yhat_i). The CI is estimate -/+ z * sigma / sqrt(n).
"""

from __future__ import annotations

from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .errors import ArgumentError, EstimationError
from .estimators import ActiveSample, EstimateReport, point_estimate
from .hoeffding import ProjectionEvaluator
from .kernels import KernelSpec, as_values

# estimators whose correction is divided by n_hat; their linearization
# centers the projection residual at its Hajek mean
NORMALIZED_KINDS = ("classical", "aipw-normalized")


@dataclass(frozen=True)
class VarianceBreakdown:
    var1: float
    var2: float
    sigma2: float
    m1_hat: float
    m2_hat: float
    clamped: bool = False


def ht_moments(sample: ActiveSample, h1_values):
    """Horvitz-Thompson first and second moments of the projection values
    at the labeled units: (1/n) sum_i (xi_i / pi_i) h1_i^k, k = 1, 2."""
    if sample.n_lab < 1:
        raise EstimationError("no labeled units", n_lab=0)
    h = np.asarray(h1_values, dtype=float).reshape(-1)
    if h.shape[0] != sample.n_lab:
        raise ArgumentError("one projection value per labeled unit expected")
    w = 1.0 / sample.probs[sample.labeled]
    n = sample.n
    return float(np.sum(w * h) / n), float(np.sum(w * h * h) / n)


def _at_labeled(sample, values):
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.shape[0] == sample.n:
        return v[sample.labeled]
    if v.shape[0] == sample.n_lab:
        return v
    raise ArgumentError("values must have length n or n_lab")


def variance_estimate(sample: ActiveSample, h1_at_labeled, h1mu, r: int,
                      center: bool = False) -> VarianceBreakdown:
    """Two-part plug-in estimate of the asymptotic variance.

    ``h1mu`` may be given for all n units or for the labeled ones only.
    With ``center=True`` the residuals are centered at their Hajek mean
    before entering var2, which is the right linearization for estimators
    normalized by n_hat. A negative HT variance is clamped to 0 and flagged.
    """
    h1 = _at_labeled(sample, h1_at_labeled)
    hm = _at_labeled(sample, h1mu)
    m1, m2 = ht_moments(sample, h1)
    var_ht = m2 - m1 * m1
    clamped = var_ht < 0
    var1 = r * r * max(var_ht, 0.0)
    pi = sample.probs[sample.labeled]
    w = 1.0 / pi
    e = h1 - hm
    if center:
        e = e - np.sum(w * e) / np.sum(w)
    var2 = float(r * r / sample.n * np.sum(w * e * e * (w - 1.0)))
    return VarianceBreakdown(var1=var1, var2=var2, sigma2=var1 + var2,
                             m1_hat=m1, m2_hat=m2, clamped=bool(clamped))


def normal_quantile(p: float) -> float:
    """Standard normal quantile (Wichura's AS241 rational approximation)."""
    return NormalDist().inv_cdf(p)


def confidence_interval(theta_hat: float, sigma2_hat: float, n: int, alpha: float = 0.1):
    if not 0 < alpha < 1:
        raise ArgumentError(f"alpha must lie in (0, 1), got {alpha}")
    if sigma2_hat < 0:
        raise ArgumentError("variance must be nonnegative")
    half = normal_quantile(1 - alpha / 2) * np.sqrt(sigma2_hat / n)
    return theta_hat - half, theta_hat + half


def estimate_with_ci(sample: ActiveSample, kernel: KernelSpec, kind: str,
                     h1: ProjectionEvaluator, h1_mu: ProjectionEvaluator = None,
                     alpha: float = 0.1, policy_kind: str = "custom",
                     value_fn=None) -> EstimateReport:
    """Point estimate, plug-in variance and CI in one report.

    ``h1`` and ``h1_mu`` are projection evaluators (typically built from a
    pilot). Estimators that ignore predictions ('classical', 'ipw') use a
    zero prediction projection. ``value_fn(idx, values)`` maps stored
    labels / predictions at units ``idx`` to kernel values.
    """
    theta = point_estimate(sample, kernel, kind)
    idx = sample.labeled_index
    value_fn = value_fn or (lambda _idx, v: v)
    y_lab = as_values(value_fn(idx, sample.labels_at(idx)), kernel)
    h1_vals = h1(y_lab)
    if kind in ("classical", "ipw") or h1_mu is None:
        hm = np.zeros_like(h1_vals)
    else:
        hm = h1_mu(as_values(value_fn(idx, sample.predictions[idx]), kernel))
    vb = variance_estimate(sample, h1_vals, hm, kernel.degree,
                           center=kind in NORMALIZED_KINDS)
    lo, hi = confidence_interval(theta, vb.sigma2, sample.n, alpha)
    flags = ("variance-clamped",) if vb.clamped else ()
    return EstimateReport(estimate=float(theta), sigma2_hat=vb.sigma2, ci_low=float(lo),
                          ci_high=float(hi), n_lab=sample.n_lab, estimator_kind=kind,
                          policy_kind=policy_kind, flags=flags)

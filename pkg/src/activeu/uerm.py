"""Active U-statistic empirical risk minimization for pairwise ranking.

The loss is the pairwise logistic loss

    l(theta; z1, z2) = log(1 + exp(-s12 * theta'(x1 - x2))),  s12 = sign(y1 - y2),

plus a ridge stabilizer ``STABILIZER * ||theta||^2`` added to every risk so
that separable data still has a finite minimizer. Tied labels (s12 = 0)
contribute the constant log 2 and no gradient.

Pair sums run in a compiled loop over the pairs (numba), so a risk
evaluation costs O(n_A * n_B * p) time and O((n_A + n_B) * p) memory.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from math import comb
from typing import Callable, Optional

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from numba import njit
from scipy.special import expit, log_expit

from .errors import ArgumentError, EstimationError
from .estimators import ActiveSample
from .policy import DEFAULT_TAU, PolicySpec, policy_from_scores

STABILIZER = 1e-6
HESSIAN_RIDGE = 1e-6
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 500

_BLOCK = 512


def pairwise_logistic_loss(theta, z1, z2):
    """Loss, gradient and Hessian of one pair ``z = (x, y)``.

    Uses d = x1 - x2 and u = s * theta'd: the value is log(1 + e^{-u})
    (evaluated stably), the gradient -s * d * sigmoid(-u) and the Hessian
    d d' sigmoid(u) sigmoid(-u) (zero for ties).
    """
    theta = np.asarray(theta, dtype=float).reshape(-1)
    x1, y1 = z1
    x2, y2 = z2
    d = np.asarray(x1, dtype=float).reshape(-1) - np.asarray(x2, dtype=float).reshape(-1)
    if d.shape != theta.shape:
        raise ArgumentError("theta and covariates differ in dimension")
    s = float(np.sign(float(y1) - float(y2)))
    u = s * float(theta @ d)
    value = -float(log_expit(u))
    sig_neg = float(expit(-u))
    grad = -s * sig_neg * d
    hess = abs(s) * sig_neg * (1.0 - sig_neg) * np.outer(d, d)
    return value, grad, hess


@dataclass
class PairSums:
    value: float
    grad: np.ndarray
    hess: Optional[np.ndarray] = None


@njit(cache=True)
def _pair_loop(XA, zA, yA, wA, XB, zB, yB, wB, same, symmetric, order):
    """Fused pass over the pairs; see ``pair_sums``.

    Returns the value, per-unit gradient coefficients (gA, gB), Hessian
    row/column totals (hA, hB) and R_i = sum_j h_ij XB_j.
    """
    nA, nB, p = XA.shape[0], XB.shape[0], XA.shape[1]
    gA = np.zeros(nA)
    gB = np.zeros(nB)
    hA = np.zeros(nA)
    hB = np.zeros(nB)
    R = np.zeros((nA, p))
    value = 0.0
    for i in range(nA):
        j0 = i + 1 if symmetric else 0
        row_val = 0.0
        for j in range(j0, nB):
            if same and i == j:
                continue
            w = wA[i] * wB[j]
            if w == 0.0:
                continue
            diff = yA[i] - yB[j]
            s = 1.0 if diff > 0 else (-1.0 if diff < 0 else 0.0)
            u = s * (zA[i] - zB[j])
            e = math.exp(-abs(u))
            # softplus(-u) = log(1 + exp(-u))
            row_val += w * (math.log1p(e) + (-u if u < 0 else 0.0))
            if order == 0 or s == 0.0:
                continue
            sig_neg = e / (1.0 + e) if u >= 0 else 1.0 / (1.0 + e)
            c = -s * w * sig_neg
            gA[i] += c
            gB[j] += c
            if order == 1:
                continue
            h = w * sig_neg * (1.0 - sig_neg)
            hA[i] += h
            hB[j] += h
            for k in range(p):
                R[i, k] += h * XB[j, k]
            if symmetric:
                for k in range(p):
                    R[j, k] += h * XA[i, k]
        value += row_val
    return value, gA, gB, hA, hB, R


def pair_sums(theta, XA, yA, XB, yB, wA=None, wB=None, same: bool = False,
              order: int = 2) -> PairSums:
    """Weighted sum over ordered pairs (i in A, j in B) of
    ``wA_i * wB_j * l(theta; (XA_i, yA_i), (XB_j, yB_j))``.

    With ``same=True`` A and B index the same units and the diagonal i = j
    is skipped; if in addition the labels coincide, only i < j is visited
    and the result doubled (the loss is symmetric in its two records).
    ``order`` selects what is computed: 0 value only, 1 adds the gradient,
    2 adds the Hessian. Each unit's row is summed in index order, so results
    are deterministic.
    """
    theta = np.asarray(theta, dtype=float)
    XA = np.ascontiguousarray(XA, dtype=float)
    XB = np.ascontiguousarray(XB, dtype=float)
    yA = np.ascontiguousarray(yA, dtype=float)
    yB = np.ascontiguousarray(yB, dtype=float)
    nA, nB = XA.shape[0], XB.shape[0]
    wA = np.ones(nA) if wA is None else np.ascontiguousarray(wA, dtype=float)
    wB = np.ones(nB) if wB is None else np.ascontiguousarray(wB, dtype=float)
    symmetric = bool(same and np.array_equal(yA, yB) and np.array_equal(wA, wB))
    value, gA, gB, hA, hB, R = _pair_loop(XA, XA @ theta, yA, wA, XB, XB @ theta, yB, wB,
                                          bool(same), symmetric, int(order))
    if symmetric:
        # visited i < j only; the mirrored pair has the same value, the
        # opposite gradient coefficient on the opposite difference, and the
        # same Hessian term
        value *= 2.0
        if order == 0:
            return PairSums(value, None)
        grad = 2.0 * (XA.T @ (gA - gB))
        if order == 1:
            return PairSums(value, grad)
        hd = hA + hB
        hess = 2.0 * ((XA.T * hd) @ XA - XA.T @ R)
        return PairSums(value, grad, 0.5 * (hess + hess.T))
    if order == 0:
        return PairSums(value, None)
    grad = XA.T @ gA - XB.T @ gB
    if order == 1:
        return PairSums(value, grad)
    cross = XA.T @ R
    hess = (XA.T * hA) @ XA + (XB.T * hB) @ XB - cross - cross.T
    return PairSums(value, grad, 0.5 * (hess + hess.T))


def _scaled(ps: PairSums, scale: float, theta, order) -> tuple:
    """Divide a pair sum by ``scale`` and add the stabilizer."""
    val = ps.value / scale + STABILIZER * float(theta @ theta)
    if order == 0:
        return val, None, None
    grad = ps.grad / scale + 2 * STABILIZER * theta
    if order == 1:
        return val, grad, None
    hess = ps.hess / scale + 2 * STABILIZER * np.eye(theta.shape[0])
    return val, grad, hess


def empirical_urisk(theta, X, y, order: int = 2):
    """Stabilized empirical U-risk (1 / C(n,2)) sum_{i<j} l(theta; Z_i, Z_j)
    with gradient and Hessian. Returns ``(value, grad, hess)``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    if n < 2:
        raise ArgumentError("empirical U-risk needs at least 2 points")
    theta = np.asarray(theta, dtype=float)
    # each unordered pair appears twice among the ordered pairs
    ps = pair_sums(theta, X, y, X, y, same=True, order=order)
    return _scaled(ps, 2.0 * comb(n, 2), theta, order)


# --------------------------------------------------------------- optimizer

@dataclass
class OptimResult:
    theta: np.ndarray
    value: float
    grad_norm: float
    iterations: int
    newton_steps: int
    values: list = field(default_factory=list)


def _descend(fun: Callable, theta0, tol: float = DEFAULT_TOL,
             max_iter: int = DEFAULT_MAX_ITER) -> OptimResult:
    """Damped Newton with Armijo backtracking.

    ``fun(theta, order)`` returns ``(value, grad, hess)`` up to ``order``.
    When the Hessian is not positive definite the step falls back to the
    negative gradient. Accepted steps never increase the objective beyond
    floating-point rounding of the value itself.
    """
    if tol <= 0:
        raise ArgumentError("tolerance must be positive")
    theta = np.array(theta0, dtype=float)
    val, g, H = fun(theta, 2)
    values = [val]
    newton_steps = 0
    gn = float(np.linalg.norm(g))
    for it in range(max_iter + 1):
        if gn <= tol:
            return OptimResult(theta, val, gn, it, newton_steps, values)
        if it == max_iter:
            break
        try:
            step = -cho_solve(cho_factor(H), g)
            newton = True
        except (LinAlgError, ValueError):
            step, newton = -g, False
        slope = float(g @ step)
        if not slope < 0:
            step, newton, slope = -g, False, -gn * gn
        t = 1.0
        accepted = False
        noise = 8 * np.finfo(float).eps * max(1.0, abs(val))
        full = None
        while t > 1e-14:
            cand = theta + t * step
            if t == 1.0:
                # the full step is usually accepted: evaluate it completely
                full = fun(cand, 2)
                v = full[0]
            else:
                v = fun(cand, 0)[0]
            if v <= val + 1e-4 * t * slope:
                accepted = True
                break
            # near the optimum the predicted decrease falls below the
            # resolution of the value: accept if the value did not rise
            if -t * slope < noise and v <= val + noise:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        newton_steps += newton
        theta = cand
        val, g, H = full if t == 1.0 else fun(theta, 2)
        values.append(val)
        gn = float(np.linalg.norm(g))
    raise EstimationError(
        f"optimizer did not converge (gradient norm {gn:.3g} > {tol:g})",
        theta=theta.tolist(), grad_norm=gn, iterations=len(values) - 1)


def minimize_empirical_urisk(X, y, theta0=None, tol: float = DEFAULT_TOL,
                             max_iter: int = DEFAULT_MAX_ITER) -> OptimResult:
    """Minimizer of the stabilized empirical U-risk over all pairs of (X, y)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.shape[0] < 2:
        raise ArgumentError("need at least 2 points")
    theta0 = np.zeros(X.shape[1]) if theta0 is None else theta0
    return _descend(lambda th, order: empirical_urisk(th, X, y, order), theta0, tol, max_iter)


def pilot_stage(X, y, pilot_budget: int, seed: int = 0, candidates=None,
                tol: float = DEFAULT_TOL):
    """Uniform pilot of ``pilot_budget`` units (drawn from ``candidates``,
    default all units) and the pilot estimate from their pairs.

    Returns ``(theta_pilot, pilot_index)``.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    n, p = X.shape
    pool = np.arange(n) if candidates is None else np.asarray(candidates)
    if pilot_budget < p + 1:
        raise ArgumentError(f"pilot budget must be at least p + 1 = {p + 1}")
    if pilot_budget > pool.shape[0]:
        raise ArgumentError("pilot budget exceeds the number of units")
    idx = np.sort(np.random.default_rng(seed).choice(pool, pilot_budget, replace=False))
    y = np.asarray(y, dtype=float).reshape(-1)
    res = minimize_empirical_urisk(X[idx], y[idx], tol=tol)
    return res.theta, idx


# ------------------------------------------------------- A-optimal scores

def gradient_projections(theta, XQ, yQ, XP, yP, wP=None, exclude_self=False):
    """Weighted average over partners j of grad l(theta; Q_i, P_j) for every
    query unit i; the gradient analogue of the first-order projection.

    With ``exclude_self`` Q and P index the same units and j = i is skipped.
    """
    theta = np.asarray(theta, dtype=float)
    XQ, XP = np.asarray(XQ, dtype=float), np.asarray(XP, dtype=float)
    nQ, nP = XQ.shape[0], XP.shape[0]
    wP = np.ones(nP) if wP is None else np.asarray(wP, dtype=float)
    zQ, zP = XQ @ theta, XP @ theta
    out = np.empty((nQ, XQ.shape[1]))
    for s0 in range(0, nQ, _BLOCK):
        rows = slice(s0, min(s0 + _BLOCK, nQ))
        sgn = np.sign(yQ[rows, None] - yP[None, :])
        W = np.broadcast_to(wP, (rows.stop - s0, nP)).copy()
        if exclude_self:
            r = np.arange(rows.start, rows.stop)
            W[r - s0, r] = 0.0
        C = -sgn * W * expit(-sgn * (zQ[rows, None] - zP[None, :]))
        tot = W.sum(axis=1)
        if np.any(tot <= 0):
            raise EstimationError("a query unit has no partner for the gradient projection")
        out[rows] = (C.sum(axis=1)[:, None] * XQ[rows] - C @ XP) / tot[:, None]
    return out


def _safe_inverse(H):
    try:
        cho_factor(H)
        return np.linalg.inv(H)
    except (LinAlgError, ValueError):
        warnings.warn("Hessian not positive definite; adding a 1e-6 ridge",
                      RuntimeWarning, stacklevel=3)
        return np.linalg.inv(H + HESSIAN_RIDGE * np.eye(H.shape[0]))


@dataclass
class AOptimalFit:
    model: object
    targets: np.ndarray
    scores: np.ndarray
    hessian: np.ndarray


def a_optimal_scores(X, predictions, theta_pilot, pilot_idx, pilot_labels,
                     learner_factory: Callable) -> AOptimalFit:
    """Per-unit A-optimality scores sqrt(S(X_i)).

    On the pilot, g and g^mu are pilot-partner averages of the gradient
    kernel on true labels and on predictions. The Hessian of the pairwise
    logistic risk does not involve the labels (except through ties), so it
    is taken over all n units with predictions. Targets
    ||H^{-1}(g_i - g^mu_i)||^2 = tr((g - g^mu)(g - g^mu)' H^{-2}) are
    square-rooted and regressed on X; predictions are clamped at 0.
    """
    X = np.asarray(X, dtype=float)
    yhat = np.asarray(predictions, dtype=float)
    theta = np.asarray(theta_pilot, dtype=float)
    pidx = np.asarray(pilot_idx)
    ylab = np.asarray(pilot_labels, dtype=float)
    if pidx.shape[0] < 2:
        raise ArgumentError("pilot needs at least 2 units")
    Xp = X[pidx]
    g = gradient_projections(theta, Xp, ylab, Xp, ylab, exclude_self=True)
    gmu = gradient_projections(theta, Xp, yhat[pidx], Xp, yhat[pidx], exclude_self=True)
    H = empirical_urisk(theta, X, yhat, order=2)[2]
    Hinv = _safe_inverse(H)
    targets = np.sum(((g - gmu) @ Hinv.T) ** 2, axis=1)
    model = learner_factory().fit(Xp, np.sqrt(targets))
    scores = np.clip(np.asarray(model.predict(X), dtype=float), 0.0, None)
    return AOptimalFit(model=model, targets=targets, scores=scores, hessian=H)


def active_policy_with_pilot(scores, pilot_idx, n_b: float, tau: float = DEFAULT_TAU,
                             count_pilot: bool = True) -> PolicySpec:
    """Sampling probabilities for the active stage: pilot units are labeled
    with probability 1; the others share the remaining budget
    (n_b - pilot size when ``count_pilot``) in proportion to the scores,
    then trimmed."""
    scores = np.asarray(scores, dtype=float)
    n = scores.shape[0]
    pidx = np.asarray(pilot_idx, dtype=int)
    rest = np.setdiff1d(np.arange(n), pidx)
    budget = n_b - pidx.shape[0] if count_pilot else n_b
    if not 0 < budget <= rest.shape[0]:
        raise ArgumentError(
            f"budget {n_b} leaves {budget} labels for {rest.shape[0]} non-pilot units")
    sub = policy_from_scores(scores[rest], budget, tau, kind="active")
    probs = np.ones(n)
    probs[rest] = sub.probs
    raw = np.ones(n)
    raw[rest] = sub.raw
    return PolicySpec(kind="active", tau=tau, budget=float(n_b), probs=probs, raw=raw)


# ------------------------------------------------------------ active risk

def active_u_risk(theta, sample: ActiveSample, order: int = 1):
    """Stabilized active U-risk: the pairwise risk on predictions over all
    C(n,2) pairs plus the IPW correction sum over labeled pairs of
    (l(Z pair) - l(Zhat pair)) / (pi_i pi_j), both divided by C(n,2).

    Returns ``(value, grad, hess)`` up to ``order``.
    """
    if sample.covariates is None:
        raise ArgumentError("active U-risk needs covariates")
    if sample.n_lab < 2:
        raise EstimationError("no labeled pair", n_lab=sample.n_lab)
    if not sample.has_predictions():
        raise ArgumentError("active U-risk needs predictions for every unit")
    theta = np.asarray(theta, dtype=float)
    X = sample.covariates
    yhat = sample.predictions
    idx = sample.labeled_index
    w = 1.0 / sample.probs[idx]
    XL, yL, yhL = X[idx], sample.labels_at(idx), yhat[idx]
    plug = pair_sums(theta, X, yhat, X, yhat, same=True, order=order)
    true = pair_sums(theta, XL, yL, XL, yL, w, w, same=True, order=order)
    pred = pair_sums(theta, XL, yhL, XL, yhL, w, w, same=True, order=order)
    tot = PairSums(plug.value + true.value - pred.value,
                   None if order < 1 else plug.grad + true.grad - pred.grad,
                   None if order < 2 else plug.hess + true.hess - pred.hess)
    return _scaled(tot, 2.0 * comb(sample.n, 2), theta, order)


@dataclass
class UERMResult:
    theta_hat: np.ndarray
    iterations: int
    grad_norm: float
    sandwich_cov: Optional[np.ndarray]
    policy: dict
    objective: float = float("nan")
    meta: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "theta_hat": self.theta_hat.tolist(), "iterations": self.iterations,
            "grad_norm": self.grad_norm,
            "sandwich_cov": None if self.sandwich_cov is None else self.sandwich_cov.tolist(),
            "policy": self.policy, "objective": self.objective, "meta": self.meta,
        }


def _policy_summary(sample: ActiveSample, kind: str) -> dict:
    return {"kind": kind, "budget": sample.budget, "n_lab": sample.n_lab,
            "expected_labels": float(np.sum(sample.probs)),
            "min_prob": float(np.min(sample.probs))}


def minimize_active_risk(sample: ActiveSample, theta_pilot, tol: float = DEFAULT_TOL,
                         max_iter: int = DEFAULT_MAX_ITER, sandwich: bool = True,
                         policy_kind: str = "active") -> UERMResult:
    """Minimize the active U-risk, warm-started at ``theta_pilot``."""
    res = _descend(lambda th, order: active_u_risk(th, sample, order),
                   theta_pilot, tol, max_iter)
    cov = sandwich_covariance(sample, res.theta) if sandwich else None
    return UERMResult(theta_hat=res.theta, iterations=res.iterations,
                      grad_norm=res.grad_norm, sandwich_cov=cov,
                      policy=_policy_summary(sample, policy_kind), objective=res.value,
                      meta={"stabilizer": STABILIZER, "newton_steps": res.newton_steps})


def sandwich_covariance(sample: ActiveSample, theta_hat) -> np.ndarray:
    """Plug-in covariance 4 H^{-1} Sigma_phi H^{-1} of sqrt(n) (theta_hat - theta*).

    phi_i = g^mu_i + (g_i - g^mu_i) xi_i / pi_i, where g^mu_i averages the
    gradient kernel on predictions over all other units and g_i averages it
    on true labels over the other labeled units with Hajek weights 1/pi_j.
    H is the Hajek-weighted labeled-pair Hessian; Sigma_phi the empirical
    covariance of phi over all n units.
    """
    theta = np.asarray(theta_hat, dtype=float)
    X, yhat = sample.covariates, sample.predictions
    idx = sample.labeled_index
    if idx.shape[0] < 3:
        raise EstimationError("sandwich covariance needs at least 3 labeled units",
                              n_lab=int(idx.shape[0]))
    w = 1.0 / sample.probs[idx]
    XL, yL = X[idx], sample.labels_at(idx)
    gmu = gradient_projections(theta, X, yhat, X, yhat, exclude_self=True)
    g = gradient_projections(theta, XL, yL, XL, yL, wP=w, exclude_self=True)
    phi = gmu.copy()
    phi[idx] += (g - gmu[idx]) * w[:, None]
    Sigma = np.cov(phi, rowvar=False, bias=True).reshape(theta.shape[0], -1)
    ps = pair_sums(theta, XL, yL, XL, yL, w, w, same=True, order=2)
    total_w = (w.sum() ** 2 - np.sum(w * w))
    H = ps.hess / total_w
    Hinv = _safe_inverse(H)
    cov = 4.0 * Hinv @ Sigma @ Hinv.T
    return 0.5 * (cov + cov.T)


# ------------------------------------------------------------- baselines

def noml_estimate(sample: ActiveSample, tol: float = DEFAULT_TOL,
                  max_iter: int = DEFAULT_MAX_ITER) -> UERMResult:
    """Labeled-only U-estimator: minimizer of the risk over labeled pairs."""
    idx = sample.labeled_index
    if idx.shape[0] < 2:
        raise EstimationError("no labeled pair", n_lab=int(idx.shape[0]))
    res = minimize_empirical_urisk(sample.covariates[idx], sample.labels_at(idx),
                                   tol=tol, max_iter=max_iter)
    return UERMResult(theta_hat=res.theta, iterations=res.iterations,
                      grad_norm=res.grad_norm, sandwich_cov=None,
                      policy=_policy_summary(sample, "uniform"), objective=res.value,
                      meta={"stabilizer": STABILIZER})


def semi_risk(theta, X, y, yhat, order: int = 2):
    """(1 / (m(m-1))) sum_{i != j} l(theta; (X_i, y_i), (X_j, yhat_j)) over the
    m labeled units, plus the stabilizer."""
    m = X.shape[0]
    ps = pair_sums(theta, X, y, X, yhat, same=True, order=order)
    return _scaled(ps, float(m * (m - 1)), np.asarray(theta, dtype=float), order)


def semi_estimate(sample: ActiveSample, tol: float = DEFAULT_TOL,
                  max_iter: int = DEFAULT_MAX_ITER) -> UERMResult:
    """Cross pairs of labeled and pseudo-labeled records over the labeled
    units, minimized by the same optimizer."""
    idx = sample.labeled_index
    if idx.shape[0] < 2:
        raise EstimationError("no labeled pair", n_lab=int(idx.shape[0]))
    X, y, yh = sample.covariates[idx], sample.labels_at(idx), sample.predictions[idx]
    res = _descend(lambda th, order: semi_risk(th, X, y, yh, order),
                   np.zeros(X.shape[1]), tol, max_iter)
    return UERMResult(theta_hat=res.theta, iterations=res.iterations,
                      grad_norm=res.grad_norm, sandwich_cov=None,
                      policy=_policy_summary(sample, "uniform"), objective=res.value,
                      meta={"stabilizer": STABILIZER})


def angle_degrees(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    c = float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))

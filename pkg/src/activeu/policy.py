"""Sampling policies: uncertainty scores, budget scaling, trimming, and CRN
label draws.

Labels are always drawn as ``xi_i = 1{U_i <= pi_i}`` from a stored uniform
vector, so two policies evaluated on the same uniforms label nested sets
whenever one dominates the other pointwise.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ArgumentError
from .hoeffding import estimate_h1
from .kernels import KernelSpec, as_values

DEFAULT_TAU = 0.7


@dataclass(frozen=True, eq=False)
class PolicySpec:
    kind: str
    tau: float
    budget: float
    probs: np.ndarray
    raw: Optional[np.ndarray] = None

    @property
    def n(self):
        return int(self.probs.shape[0])

    @property
    def expected_labels(self) -> float:
        return float(np.sum(self.probs))


@dataclass
class UncertaintyFit:
    """Fitted score model plus the pieces used to build it."""

    model: object
    mu: object
    targets: np.ndarray
    h1: Optional[object] = None
    h1_mu: Optional[object] = None


def _check_budget(n_b, n):
    if not 0 < n_b <= n:
        raise ArgumentError(f"budget must satisfy 0 < n_b <= n, got n_b={n_b}, n={n}")


def raw_probabilities(scores, n_b: float) -> np.ndarray:
    """n_b * V_i / sum_j V_j, capped at 1 without redistributing the excess.

    Negative scores are clamped to 0. All-zero scores fall back to the
    uniform rule n_b / n with a warning.
    """
    v = np.clip(np.asarray(scores, dtype=float).reshape(-1), 0.0, None)
    n = v.shape[0]
    _check_budget(n_b, n)
    total = v.sum()
    if not total > 0:
        warnings.warn("all uncertainty scores are zero; using uniform probabilities",
                      RuntimeWarning, stacklevel=2)
        return np.full(n, n_b / n)
    return np.minimum(1.0, n_b * v / total)


def trim(raw, tau: float, n_b: float, n: int, kind: str = "custom") -> PolicySpec:
    """Blend with the uniform rule: tau * raw + (1 - tau) * n_b / n, capped at 1."""
    if not 0.0 <= tau <= 1.0:
        raise ArgumentError(f"tau must lie in [0, 1], got {tau}")
    raw = np.asarray(raw, dtype=float).reshape(-1)
    if raw.shape[0] != n:
        raise ArgumentError("raw probabilities have the wrong length")
    probs = np.minimum(1.0, tau * raw + (1.0 - tau) * (n_b / n))
    return PolicySpec(kind=kind, tau=tau, budget=float(n_b), probs=probs, raw=raw)


def uniform_policy(n: int, n_b: float) -> PolicySpec:
    _check_budget(n_b, n)
    probs = np.full(n, n_b / n)
    return PolicySpec(kind="uniform", tau=0.0, budget=float(n_b), probs=probs, raw=probs)


def sample_labels(policy, uniforms=None, seed=None):
    """Labeling indicators 1{U_i <= pi_i}. Returns ``(xi, uniforms)``.

    ``policy`` is a PolicySpec or a probability vector. Pass ``uniforms`` to
    reuse a draw across policies, or ``seed`` to generate a fresh one.
    """
    probs = policy.probs if isinstance(policy, PolicySpec) else np.asarray(policy, float)
    if uniforms is None:
        uniforms = np.random.default_rng(seed).random(probs.shape[0])
    uniforms = np.asarray(uniforms, dtype=float)
    if uniforms.shape != probs.shape:
        raise ArgumentError("uniforms and probabilities differ in shape")
    if np.any((uniforms < 0) | (uniforms >= 1)):
        raise ArgumentError("uniforms must lie in [0, 1)")
    return uniforms <= probs, uniforms


def _folds(m, seed):
    perm = np.random.default_rng(seed).permutation(m)
    half = m // 2
    return np.sort(perm[:half]), np.sort(perm[half:])


def _residual_scalar(y):
    # Kendall values are (label, partner) pairs; the residual is on the label
    return y[:, 0] if y.ndim == 2 else y


def learn_uncertainty(pilot_X, pilot_Y, kernel: KernelSpec, learner_factory: Callable,
                      mu=None, seed: int = 0, target: str = "hoeffding",
                      pilot_pred=None, value_fn=None) -> UncertaintyFit:
    """Fit the score model V(x) on a labeled pilot set.

    Without a pre-trained ``mu`` the pilot is split in two folds by a seeded
    permutation: the first trains ``mu``; the second supplies the true labels
    and the mu-predictions for the projection estimates. With a pre-trained
    ``mu`` the whole pilot serves both roles. Targets
    |h1_hat(Y_i) - h1_mu_hat(Yhat_i)| (or |Y_i - Yhat_i| for
    ``target='residual'``) are then regressed on X over the full pilot.

    ``value_fn(X, y)`` turns a raw label vector into kernel values (used by
    Kendall, whose values pair the label with a covariate); it defaults to the
    identity.
    """
    X = np.asarray(pilot_X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    y = np.asarray(pilot_Y, dtype=float).reshape(-1)
    m = y.shape[0]
    r = kernel.degree
    if m < 2 * (r - 1) + 4:
        raise ArgumentError(f"pilot of size {m} too small for degree {r}")
    if target not in ("hoeffding", "residual"):
        raise ArgumentError(f"unknown uncertainty target {target!r}")
    value_fn = value_fn or (lambda _X, v: v)

    if mu is None:
        f1, f2 = _folds(m, seed)
        mu = learner_factory().fit(X[f1], y[f1])
        proj_idx = f2
    else:
        proj_idx = np.arange(m)
    yhat = np.asarray(mu.predict(X) if pilot_pred is None else pilot_pred, dtype=float)

    vals = as_values(value_fn(X, y), kernel)
    vals_hat = as_values(value_fn(X, yhat), kernel)
    if target == "residual":
        h1 = h1_mu = None
        targets = np.abs(y - yhat)
    else:
        h1 = estimate_h1(vals[proj_idx], kernel, "true-label", seed=seed)
        h1_mu = estimate_h1(vals_hat[proj_idx], kernel, "prediction", seed=seed)
        targets = np.abs(h1(vals) - h1_mu(vals_hat))
    model = learner_factory().fit(X, targets)
    return UncertaintyFit(model=model, mu=mu, targets=targets, h1=h1, h1_mu=h1_mu)


def scores_from_model(model, X) -> np.ndarray:
    return np.clip(np.asarray(model.predict(X), dtype=float), 0.0, None)


def policy_from_scores(scores, n_b: float, tau: float = DEFAULT_TAU,
                       kind: str = "active") -> PolicySpec:
    """raw_probabilities followed by trim."""
    scores = np.asarray(scores, dtype=float).reshape(-1)
    raw = raw_probabilities(scores, n_b)
    return trim(raw, tau, n_b, scores.shape[0], kind=kind)


def active_policy(fit: UncertaintyFit, X, n_b: float, tau: float = DEFAULT_TAU) -> PolicySpec:
    return policy_from_scores(scores_from_model(fit.model, X), n_b, tau, kind="active")


def residual_policy(pilot_X, pilot_Y, X, mu, learner_factory, n_b, tau=DEFAULT_TAU,
                    seed=0, kernel: Optional[KernelSpec] = None) -> PolicySpec:
    """The mean-estimation rule pi proportional to E[|Y - Yhat| | X]
    ('plugin-act-Y'), through the same fit / scale / trim pipeline."""
    from .kernels import builtin_kernel
    fit = learn_uncertainty(pilot_X, pilot_Y, kernel or builtin_kernel("mean"),
                            learner_factory, mu=mu, seed=seed, target="residual")
    return policy_from_scores(scores_from_model(fit.model, X), n_b, tau,
                              kind="plugin-act-y")


def oracle_policy(true_s, n_b: float, tau: float = DEFAULT_TAU) -> PolicySpec:
    """Optimal rule with known s(X) = E[(h1(Y) - h1_mu(Yhat))^2 | X]:
    probabilities proportional to sqrt(s), then trimmed."""
    s = np.asarray(true_s, dtype=float)
    if np.any(s < 0):
        raise ArgumentError("s(X) must be nonnegative")
    return policy_from_scores(np.sqrt(s), n_b, tau, kind="oracle")

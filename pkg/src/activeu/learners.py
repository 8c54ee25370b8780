"""Small regression learners used for the prediction model, the uncertainty
score and the A-optimality score.

Any object with ``fit(X, y) -> self`` and ``predict(X) -> array`` works in
their place.
"""

from __future__ import annotations

import math
from typing import Protocol

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ArgumentError, EstimationError


class RegressionModel(Protocol):
    def fit(self, X, y) -> "RegressionModel": ...

    def predict(self, X) -> np.ndarray: ...


def _as_2d(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    return X


def _check_fit_inputs(X, y):
    X = _as_2d(X)
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.shape[0] == 0:
        raise ArgumentError("cannot fit on an empty training set")
    if X.shape[0] != y.shape[0]:
        raise ArgumentError("features and targets differ in length")
    return X, y


class KNNRegressor:
    """Mean target of the k nearest training rows (Euclidean).

    Distance ties at the k-th neighbour go to the lower training index.
    ``k=0`` means ceil(sqrt(m)) for a training set of m rows.
    """

    _chunk = 1024

    def __init__(self, k: int = 0, seed: int = 0):
        if k < 0:
            raise ArgumentError(f"k must be >= 0, got {k}")
        self.k = k
        self.seed = seed

    def fit(self, X, y):
        X, y = _check_fit_inputs(X, y)
        self.X_ = X.copy()
        self.y_ = y.copy()
        m = X.shape[0]
        k = self.k or math.ceil(math.sqrt(m))
        self.k_ = min(k, m)
        return self

    def predict(self, X):
        single = np.ndim(X) == 1 and self.X_.shape[1] > 1
        Xq = np.asarray(X, dtype=float).reshape(1, -1) if single else _as_2d(X)
        if Xq.shape[1] != self.X_.shape[1]:
            raise ArgumentError("feature dimension differs from the training data")
        out = np.empty(Xq.shape[0])
        k = self.k_
        m = self.X_.shape[0]
        for s in range(0, Xq.shape[0], self._chunk):
            q = Xq[s:s + self._chunk]
            if k == m:
                out[s:s + q.shape[0]] = self.y_.mean()
                continue
            d = cdist(q, self.X_, "sqeuclidean")
            near = np.argpartition(d, k - 1, axis=1)[:, :k]
            rows = np.arange(q.shape[0])[:, None]
            kth = d[rows, near].max(axis=1, keepdims=True)
            pred = self.y_[near].mean(axis=1)
            # rows where the k-th distance is shared beyond the cut: take the
            # tied training points in index order
            tied = np.flatnonzero((d <= kth).sum(axis=1) > k)
            for i in tied:
                below = np.flatnonzero(d[i] < kth[i, 0])
                at = np.flatnonzero(d[i] == kth[i, 0])[:k - below.size]
                pred[i] = self.y_[np.concatenate([below, at])].mean()
            out[s:s + q.shape[0]] = pred
        return out[0] if single else out


class RidgeRegressor:
    """Least squares with intercept and an L2 penalty on the slopes.

    Solved as an augmented least-squares problem on centered data (SVD
    based), which avoids forming the normal equations.
    """

    def __init__(self, lam: float = 1e-3, seed: int = 0):
        if lam < 0:
            raise ArgumentError(f"lambda must be >= 0, got {lam}")
        self.lam = lam
        self.seed = seed

    def fit(self, X, y):
        X, y = _check_fit_inputs(X, y)
        xm, ym = X.mean(axis=0), y.mean()
        Xc, yc = X - xm, y - ym
        p = X.shape[1]
        if self.lam > 0:
            A = np.vstack([Xc, math.sqrt(self.lam) * np.eye(p)])
            b = np.concatenate([yc, np.zeros(p)])
        else:
            A, b = Xc, yc
        coef, _, rank, sv = np.linalg.lstsq(A, b, rcond=None)
        if rank < p:
            raise EstimationError("singular design: ridge with lambda=0 is not identified",
                                  rank=int(rank))
        self.coef_ = coef
        self.intercept_ = ym - xm @ coef
        return self

    def predict(self, X):
        single = np.ndim(X) == 1 and self.coef_.shape[0] > 1
        Xq = np.asarray(X, dtype=float).reshape(1, -1) if single else _as_2d(X)
        out = Xq @ self.coef_ + self.intercept_
        return out[0] if single else out


def knn_regressor(k: int = 0, seed: int = 0) -> KNNRegressor:
    return KNNRegressor(k=k, seed=seed)


def ridge_regressor(lam: float = 1e-3, seed: int = 0) -> RidgeRegressor:
    return RidgeRegressor(lam=lam, seed=seed)


LEARNERS = {"knn": knn_regressor, "ridge": ridge_regressor}


def learner_factory(name: str, **params):
    """Zero-argument factory producing fresh, unfitted learners."""
    try:
        make = LEARNERS[name]
    except KeyError:
        raise ArgumentError(
            f"unknown learner {name!r}; expected one of {', '.join(LEARNERS)}") from None
    make(**params)  # validate eagerly
    return lambda: make(**params)

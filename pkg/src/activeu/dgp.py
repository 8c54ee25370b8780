"""Synthetic data generating processes and cached reference targets.

``appendix-c1``: X ~ N(0, 0.3 I + 0.7 11'), Y = intercept + f(X) + eps with
f(X) = 1.2 sin(X1) + 0.8 cos(X2) + 0.6 X1 X2 + 0.5 X3^2 + 0.7 tanh(X4) and
eps ~ N(0, sigma^2), sigma = 0.3 by default.

``linear-ranking``: X ~ N(0, I), Y = X' theta* + eps, eps ~ N(0, sigma^2)
with sigma = 1 by default and ||theta*|| = 1.

Normal draws come from numpy's ``Generator.standard_normal`` (ziggurat);
correlated covariates use the Cholesky factor of the covariance.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Optional

import numpy as np

from .errors import ArgumentError
from .kernels import KernelSpec, builtin_kernel

DGP_KINDS = ("appendix-c1", "linear-ranking")
REFERENCE_SIZE = 200_000


@dataclass(frozen=True)
class DGPSpec:
    kind: str = "appendix-c1"
    p: int = 4
    n: int = 2000
    noise_sigma: Optional[float] = None
    seed: int = 0
    intercept: float = 0.0

    def __post_init__(self):
        if self.kind not in DGP_KINDS:
            raise ArgumentError(f"unknown DGP {self.kind!r}; expected one of {DGP_KINDS}")
        if self.kind == "appendix-c1" and self.p < 4:
            raise ArgumentError("appendix-c1 needs p >= 4")
        if self.p < 1 or self.n < 1:
            raise ArgumentError("p and n must be positive")
        if self.noise_sigma is not None and self.noise_sigma < 0:
            raise ArgumentError("noise_sigma must be nonnegative")

    @property
    def sigma(self) -> float:
        if self.noise_sigma is not None:
            return float(self.noise_sigma)
        return 0.3 if self.kind == "appendix-c1" else 1.0


@dataclass
class Dataset:
    X: np.ndarray
    y: Optional[np.ndarray] = None
    yhat: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]


def c1_covariance(p: int) -> np.ndarray:
    return 0.3 * np.eye(p) + 0.7 * np.ones((p, p))


def c1_mean_function(X) -> np.ndarray:
    x1, x2, x3, x4 = X[:, 0], X[:, 1], X[:, 2], X[:, 3]
    return (1.2 * np.sin(x1) + 0.8 * np.cos(x2) + 0.6 * x1 * x2
            + 0.5 * x3 ** 2 + 0.7 * np.tanh(x4))


def ranking_theta(p: int) -> np.ndarray:
    return np.ones(p) / np.sqrt(p)


def mean_function(spec: DGPSpec, X) -> np.ndarray:
    if spec.kind == "appendix-c1":
        return spec.intercept + c1_mean_function(X)
    return spec.intercept + X @ ranking_theta(spec.p)


def sample_covariates(spec: DGPSpec, n: int, rng) -> np.ndarray:
    z = rng.standard_normal((n, spec.p))
    if spec.kind == "appendix-c1":
        return z @ np.linalg.cholesky(c1_covariance(spec.p)).T
    return z


def sample_outcomes(spec: DGPSpec, X, rng) -> np.ndarray:
    return mean_function(spec, X) + spec.sigma * rng.standard_normal(X.shape[0])


def generate_dgp(spec: DGPSpec, n: Optional[int] = None, rng=None) -> Dataset:
    """Draw (X, Y); deterministic for a given ``spec.seed`` unless an
    explicit generator is passed."""
    n = spec.n if n is None else n
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    X = sample_covariates(spec, n, rng)
    y = sample_outcomes(spec, X, rng)
    meta = {"dgp": spec.kind, "sigma": spec.sigma}
    if spec.kind == "linear-ranking":
        meta["theta_star"] = ranking_theta(spec.p).tolist()
    return Dataset(X=X, y=y, meta=meta)


def kernel_values(kernel: KernelSpec, X, y) -> np.ndarray:
    """Kernel inputs for labels ``y`` at covariates ``X``.

    Scalar kernels use the label itself. Kendall values pair the label with
    the first covariate, which is always observed.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    if kernel.value_dim == 2:
        return np.column_stack([y, np.asarray(X, dtype=float)[:, 0]])
    return y


@lru_cache(maxsize=32)
def _reference(spec: DGPSpec, kernel_name: str, n_ref: int) -> float:
    from .estimators import u_statistic
    kernel = builtin_kernel(kernel_name)
    if kernel.fast_path == "none" and kernel.degree > 1:
        raise ArgumentError(f"no fast reference computation for {kernel_name!r}")
    data = generate_dgp(replace(spec, n=n_ref))
    return u_statistic(kernel_values(kernel, data.X, data.y), kernel)


def reference_theta(spec: DGPSpec, kernel_name: str, n_ref: int = REFERENCE_SIZE,
                    seed: int = 20240601) -> float:
    """Full-data U-statistic on a large reference draw (cached per DGP,
    kernel and size); stands in for the population target."""
    return _reference(replace(spec, seed=seed, n=1), kernel_name, n_ref)

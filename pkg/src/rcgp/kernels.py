"""Squared-exponential kernel, prior mean functions and Gram matrices.

Covariates are handled as ``(n, d)`` float arrays; a 1-D array of length
``n`` is read as ``n`` scalar covariates.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Protocol

import numpy as np
from scipy.linalg import solve_triangular
from scipy.spatial.distance import cdist

from .errors import InputError

DEFAULT_RELATIVE_JITTER = 1e-8


def as_covariates(X, name: str = "X") -> np.ndarray:
    """Return ``X`` as a finite ``(n, d)`` float array."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    elif X.ndim == 1:
        X = X[:, None]
    elif X.ndim != 2:
        raise InputError(f"{name} must be 1-D or 2-D, got shape {X.shape}")
    if X.shape[0] == 0:
        raise InputError(f"{name} is empty")
    if not np.all(np.isfinite(X)):
        raise InputError(f"{name} contains non-finite values")
    return X


def as_targets(y, n: int | None = None, name: str = "y") -> np.ndarray:
    y = np.asarray(y, dtype=float).reshape(-1)
    if n is not None and y.shape[0] != n:
        raise InputError(f"{name} has length {y.shape[0]}, expected {n}")
    if not np.all(np.isfinite(y)):
        raise InputError(f"{name} contains non-finite values")
    return y


@dataclass(frozen=True, eq=False)
class KernelParams:
    """Hyperparameters of the squared-exponential kernel.

    ``k(x, x') = signal_variance * exp(-|x - x'|^2 / (2 lengthscale^2))``.

    ``lengthscale`` may be a scalar (isotropic) or one value per input
    dimension. ``jitter`` is the nugget added to training Gram diagonals;
    ``None`` means ``1e-8 * signal_variance``, which keeps the nugget
    proportional to the signal scale while hyperparameters move.
    """

    lengthscale: float | np.ndarray = 1.0
    signal_variance: float = 1.0
    jitter: float | None = None

    def __post_init__(self):
        ls = np.asarray(self.lengthscale, dtype=float)
        if ls.ndim > 1 or ls.size == 0:
            raise InputError("lengthscale must be a scalar or a 1-D array")
        if not np.all(np.isfinite(ls)) or np.any(ls <= 0):
            raise InputError(f"lengthscale must be positive, got {self.lengthscale}")
        if ls.ndim == 0:
            object.__setattr__(self, "lengthscale", float(ls))
        else:
            object.__setattr__(self, "lengthscale", ls.copy())
        if not np.isfinite(self.signal_variance) or self.signal_variance <= 0:
            raise InputError(f"signal_variance must be positive, got {self.signal_variance}")
        if self.jitter is not None and (not np.isfinite(self.jitter) or self.jitter < 0):
            raise InputError(f"jitter must be non-negative, got {self.jitter}")

    @property
    def nugget(self) -> float:
        if self.jitter is None:
            return DEFAULT_RELATIVE_JITTER * self.signal_variance
        return float(self.jitter)

    @property
    def isotropic(self) -> bool:
        return np.ndim(self.lengthscale) == 0

    def with_updates(self, **changes) -> "KernelParams":
        return replace(self, **changes)

    def _scaled(self, X: np.ndarray) -> np.ndarray:
        ls = np.asarray(self.lengthscale)
        if ls.ndim == 1 and ls.shape[0] != X.shape[1]:
            raise InputError(
                f"lengthscale has {ls.shape[0]} entries but covariates have dimension {X.shape[1]}"
            )
        return X / ls


def kernel_eval(params: KernelParams, x, x_prime) -> float:
    """Evaluate the kernel at a single pair of covariates."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x_prime = np.atleast_1d(np.asarray(x_prime, dtype=float))
    if x.shape != x_prime.shape or x.ndim != 1:
        raise InputError(f"covariate dimensions differ: {x.shape} vs {x_prime.shape}")
    ls = np.asarray(params.lengthscale)
    if ls.ndim == 1 and ls.shape[0] != x.shape[0]:
        raise InputError("lengthscale dimension does not match covariates")
    r2 = float(np.sum(((x - x_prime) / ls) ** 2))
    return params.signal_variance * float(np.exp(-0.5 * r2))


def scaled_sqdist(params: KernelParams, X, X_star) -> np.ndarray:
    """Squared distances ``|x - x'|^2 / lengthscale^2`` (symmetric by construction)."""
    X = as_covariates(X, "X")
    X_star = as_covariates(X_star, "X_star")
    if X.shape[1] != X_star.shape[1]:
        raise InputError(f"covariate dimensions differ: {X.shape[1]} vs {X_star.shape[1]}")
    return cdist(params._scaled(X), params._scaled(X_star), "sqeuclidean")


def cross_gram(params: KernelParams, X, X_star) -> np.ndarray:
    """Matrix with entries ``k(X[i], X_star[j])``; no jitter."""
    return params.signal_variance * np.exp(-0.5 * scaled_sqdist(params, X, X_star))


def gram_matrix(params: KernelParams, X) -> np.ndarray:
    """Training Gram matrix ``K`` with the nugget on its diagonal."""
    K = cross_gram(params, X, X)
    K[np.diag_indices_from(K)] += params.nugget
    return K


def gram_log_derivatives(params: KernelParams, X) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(K, dK/dlog(lengthscale), dK/dlog(signal_variance))``.

    ``K`` includes the nugget. Only isotropic lengthscales are differentiated.
    """
    if not params.isotropic:
        raise InputError("log-derivatives are implemented for isotropic lengthscales only")
    r2 = scaled_sqdist(params, X, X)
    K0 = params.signal_variance * np.exp(-0.5 * r2)
    dK_dlog_ls = K0 * r2
    dK_dlog_s2 = K0.copy()
    K = K0.copy()
    K[np.diag_indices_from(K)] += params.nugget
    if params.jitter is None:
        dK_dlog_s2[np.diag_indices_from(dK_dlog_s2)] += params.nugget
    return K, dK_dlog_ls, dK_dlog_s2


# ---------------------------------------------------------------------------
# Mean functions
# ---------------------------------------------------------------------------


class MeanFunction(Protocol):
    def __call__(self, X) -> np.ndarray: ...


@dataclass(frozen=True)
class ZeroMean:
    def __call__(self, X) -> np.ndarray:
        return np.zeros(as_covariates(X).shape[0])


@dataclass(frozen=True)
class ConstantMean:
    value: float = 0.0

    def __call__(self, X) -> np.ndarray:
        return np.full(as_covariates(X).shape[0], float(self.value))


@dataclass(frozen=True)
class EmpiricalMean(ConstantMean):
    """Constant mean equal to the sample mean of the training targets."""

    @classmethod
    def fit(cls, y) -> "EmpiricalMean":
        y = as_targets(y)
        if y.size == 0:
            raise InputError("cannot fit an empirical mean to no targets")
        return cls(float(np.mean(y)))


@dataclass(frozen=True, eq=False)
class PolynomialMean:
    """Additive polynomial in each input dimension, fitted by least squares.

    Inputs are centred and scaled before forming powers so the design
    matrix stays well conditioned.
    """

    degree: int
    coefficients: np.ndarray
    shift: np.ndarray = field(default_factory=lambda: np.zeros(1))
    scale: np.ndarray = field(default_factory=lambda: np.ones(1))

    def __post_init__(self):
        if not np.all(np.isfinite(self.coefficients)):
            raise InputError("polynomial coefficients must be finite")

    @staticmethod
    def _design(Z: np.ndarray, degree: int) -> np.ndarray:
        cols = [np.ones(Z.shape[0])]
        for p in range(1, degree + 1):
            cols.extend(Z[:, j] ** p for j in range(Z.shape[1]))
        return np.column_stack(cols)

    @classmethod
    def fit(cls, X, y, degree: int = 3) -> "PolynomialMean":
        X = as_covariates(X)
        y = as_targets(y, X.shape[0])
        if degree < 0:
            raise InputError("degree must be non-negative")
        shift = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0
        V = cls._design((X - shift) / scale, degree)
        if V.shape[1] > V.shape[0]:
            raise InputError(f"degree {degree} needs at least {V.shape[1]} points")
        Q, R = np.linalg.qr(V)
        coef = solve_triangular(R, Q.T @ y)
        return cls(degree, coef, shift, scale)

    def __call__(self, X) -> np.ndarray:
        X = as_covariates(X)
        return self._design((X - self.shift) / self.scale, self.degree) @ self.coefficients


def mean_vector(mean: MeanFunction, X) -> np.ndarray:
    """Evaluate ``mean`` at every row of ``X``."""
    return np.asarray(mean(X), dtype=float).reshape(-1)

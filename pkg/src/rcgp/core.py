"""Conjugate fitting of standard and robust-conjugate GP regression.

A robust fit replaces the noise term ``sigma^2 I`` by ``sigma^2 J_w``
with ``J_w = diag(sigma^2 / (2 w^2))`` and the prior mean at the data by
``m_w = m + sigma^2 d/dy log w^2``. Everything downstream (posterior,
predictive, leave-one-out) is computed from a single Cholesky factor of
``K + sigma^2 J_w``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.linalg.lapack import dpotrf

from .errors import InputError, NumericalError
from .kernels import (
    KernelParams,
    MeanFunction,
    ZeroMean,
    as_covariates,
    as_targets,
    cross_gram,
    gram_matrix,
    mean_vector,
)
from .weights import ConstantWeight, WeightFunction, tied_beta, weight_vector

LOG_2PI = math.log(2.0 * math.pi)

# instrumentation: number of n x n factorisations performed by this process
_factorisations = 0


def factorisation_count() -> int:
    return _factorisations


def cholesky_lower(A: np.ndarray, what: str = "matrix") -> np.ndarray:
    """Lower Cholesky factor, raising :class:`NumericalError` on failure."""
    global _factorisations
    _factorisations += 1
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise NumericalError(f"{what} contains non-finite entries")
    L, info = dpotrf(A, lower=1, clean=1, overwrite_a=0)
    if info > 0:
        lam_min = float(np.linalg.eigvalsh(0.5 * (A + A.T))[0])
        raise NumericalError(
            f"{what} is not positive definite: pivot {info} of {A.shape[0]} failed "
            f"(smallest eigenvalue {lam_min:.3e})"
        )
    if info < 0:
        raise NumericalError(f"invalid argument {-info} passed to the Cholesky routine")
    return L


@dataclass(frozen=True)
class GaussianBelief:
    """A multivariate Gaussian ``N(mean, cov)``."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise InputError(f"covariance shape {cov.shape} does not match mean length {mean.size}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def var(self) -> np.ndarray:
        return np.diag(self.cov).copy()

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class Ablation:
    """Switches that remove one of the two robust modifications."""

    disable_shrinkage: bool = False
    disable_noise_reweighting: bool = False


@dataclass(frozen=True, eq=False)
class FittedModel:
    X: np.ndarray
    y: np.ndarray
    kernel: KernelParams
    mean: MeanFunction
    sigma2: float
    weight: WeightFunction
    m_vec: np.ndarray
    w_vec: np.ndarray
    grad_vec: np.ndarray
    J_w_diag: np.ndarray
    m_w: np.ndarray
    z: np.ndarray
    K: np.ndarray
    chol: np.ndarray
    alpha: np.ndarray
    ablation: Ablation = field(default_factory=Ablation)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def noise_diag(self) -> np.ndarray:
        """Diagonal of ``sigma^2 J_w``."""
        return self.sigma2 * self.J_w_diag

    @property
    def is_standard(self) -> bool:
        """True when the fit coincides with a standard GP (up to round-off)."""
        return isinstance(self.weight, ConstantWeight) and np.allclose(self.J_w_diag, 1.0) and not np.any(
            self.m_w - self.m_vec
        )

    def solve(self, B: np.ndarray) -> np.ndarray:
        """``(K + sigma^2 J_w)^{-1} B``."""
        return cho_solve((self.chol, True), B)


@dataclass(frozen=True, eq=False)
class RobustTerms:
    """Data-dependent pieces of a robust fit: weights, ``J_w``, ``m_w`` and ``z``."""

    weight: WeightFunction
    m_vec: np.ndarray
    w_vec: np.ndarray
    grad_vec: np.ndarray
    J_w_diag: np.ndarray
    m_w: np.ndarray
    z: np.ndarray


def robust_terms(
    X,
    y,
    mean: MeanFunction,
    sigma2: float,
    weight: WeightFunction,
    ablation: Ablation = Ablation(),
    tie_beta: bool = True,
) -> RobustTerms:
    if not np.isfinite(sigma2) or sigma2 <= 0:
        raise InputError(f"sigma2 must be positive, got {sigma2}")
    if tie_beta:
        weight = weight.with_beta(tied_beta(sigma2))
    m_vec = mean_vector(mean, X)
    w_vec, grad_vec = weight_vector(weight, m_vec, y, X)
    if np.any(w_vec <= 0) or not np.all(np.isfinite(w_vec)):
        raise NumericalError("weights must be positive and finite")
    J = 0.5 * sigma2 / w_vec**2
    if ablation.disable_noise_reweighting:
        J = np.ones_like(J)
    m_w = m_vec.copy() if ablation.disable_shrinkage else m_vec + sigma2 * grad_vec
    return RobustTerms(weight, m_vec, w_vec, grad_vec, J, m_w, y - m_w)


def fit(
    X,
    y,
    kernel: KernelParams,
    mean: MeanFunction | None = None,
    sigma2: float = 1.0,
    weight: WeightFunction | None = None,
    ablation: Ablation = Ablation(),
    tie_beta: bool = True,
) -> FittedModel:
    """Fit a (robust-conjugate) GP with fixed hyperparameters.

    ``weight=None`` gives the standard GP. With ``tie_beta`` the weight's
    learning rate is reset to ``sigma / sqrt(2)``.
    """
    X = as_covariates(X)
    y = as_targets(y, X.shape[0])
    mean = ZeroMean() if mean is None else mean
    weight = ConstantWeight() if weight is None else weight
    rt = robust_terms(X, y, mean, sigma2, weight, ablation, tie_beta)

    K = gram_matrix(kernel, X)
    A = K.copy()
    A[np.diag_indices_from(A)] += sigma2 * rt.J_w_diag
    L = cholesky_lower(A, "K + sigma^2 J_w")
    alpha = cho_solve((L, True), rt.z)
    return FittedModel(
        X=X, y=y, kernel=kernel, mean=mean, sigma2=float(sigma2), weight=rt.weight,
        m_vec=rt.m_vec, w_vec=rt.w_vec, grad_vec=rt.grad_vec, J_w_diag=rt.J_w_diag, m_w=rt.m_w, z=rt.z,
        K=K, chol=L, alpha=alpha, ablation=ablation,
    )


def fit_standard(X, y, kernel: KernelParams, mean: MeanFunction | None = None, sigma2: float = 1.0) -> FittedModel:
    """Standard GP fit (constant weight ``sigma / sqrt(2)``)."""
    return fit(X, y, kernel, mean, sigma2, ConstantWeight())


def posterior(model: FittedModel) -> GaussianBelief:
    """Posterior over the latent function values at the training inputs.

    Mean ``m + K (K + sigma^2 J_w)^{-1} (y - m_w)``; covariance
    ``K (K + sigma^2 J_w)^{-1} sigma^2 J_w``, evaluated as
    ``K - K A^{-1} K`` and symmetrised.
    """
    K = model.K
    mu = model.m_vec + K @ model.alpha
    V = solve_triangular(model.chol, K, lower=True)
    S = K - V.T @ V
    return GaussianBelief(mu, 0.5 * (S + S.T))


def _star_blocks(model: FittedModel, X_star):
    X_star = as_covariates(X_star, "X_star")
    if X_star.shape[1] != model.X.shape[1]:
        raise InputError(f"X_star has dimension {X_star.shape[1]}, model has {model.X.shape[1]}")
    Ks = cross_gram(model.kernel, model.X, X_star)
    V = solve_triangular(model.chol, Ks, lower=True)
    mu = mean_vector(model.mean, X_star) + Ks.T @ model.alpha
    return X_star, Ks, V, mu


def predict(model: FittedModel, X_star, include_noise: bool = False) -> GaussianBelief:
    """Posterior predictive over ``f(X_star)``.

    The latent predictive is returned by default; ``include_noise`` adds
    ``sigma^2`` to the diagonal for predicting held-out observations.
    """
    X_star, _, V, mu = _star_blocks(model, X_star)
    Kss = cross_gram(model.kernel, X_star, X_star)
    S = Kss - V.T @ V
    S = 0.5 * (S + S.T)
    if include_noise:
        S[np.diag_indices_from(S)] += model.sigma2
    return GaussianBelief(mu, S)


def predict_mean_var(model: FittedModel, X_star, include_noise: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Predictive mean and marginal variances without forming the full covariance."""
    X_star, _, V, mu = _star_blocks(model, X_star)
    var = model.kernel.signal_variance - np.sum(V**2, axis=0)
    if include_noise:
        var = var + model.sigma2
    return mu, var


def gp_log_marginal_likelihood(model: FittedModel) -> float:
    """``log N(y; m, K + sigma^2 I)`` for a standard-GP fit."""
    if not model.is_standard:
        raise InputError("the marginal likelihood is defined for constant-weight (standard GP) fits only")
    n = model.n
    return float(-0.5 * model.z @ model.alpha - np.sum(np.log(np.diag(model.chol))) - 0.5 * n * LOG_2PI)


def loss_constant(model: FittedModel) -> float:
    """The ``f``-free part ``C`` of twice the loss ``n L_n``.

    ``n L_n(f) = 1/2 [f' Lam f - 2 f' Lam (y - m_w + m) + C]`` with
    ``Lam = sigma^-2 J_w^-1`` and
    ``C = sum(wt^2 y^2 / sigma^2 - 2 y d/dy wt^2 - 2 wt^2)``, ``wt^2 = 2 w^2 / sigma^2``.
    """
    return _loss_constant(model.y, model.w_vec, model.grad_vec, model.sigma2)


def _loss_constant(y, w_vec, grad_vec, sigma2) -> float:
    wt2 = 2.0 * w_vec**2 / sigma2
    dwt2 = wt2 * grad_vec
    return float(np.sum(wt2 * y**2 / sigma2 - 2.0 * y * dwt2 - 2.0 * wt2))


def centred_loss_constant(y, m_vec, z, w_vec, grad_vec, sigma2, noise_diag) -> float:
    """Loss constant after writing the loss in ``g = f - m``.

    ``n L_n = 1/2 [g' Lam g - 2 g' Lam z + C_centred]``.
    """
    lam = 1.0 / noise_diag
    return _loss_constant(y, w_vec, grad_vec, sigma2) - float(m_vec @ (lam * m_vec)) - 2.0 * float(m_vec @ (lam * z))


def log_pseudo_marginal(model: FittedModel) -> float:
    """``log int N(f; m, K) exp(-n L_n(f)) df`` in closed form.

    Diagnostic only: ``exp(-n L_n)`` is not a density over ``y``, so this
    quantity is not a likelihood and must not be maximised to choose
    hyperparameters.
    """
    ab = model.ablation
    if ab.disable_noise_reweighting or ab.disable_shrinkage:
        raise InputError("the pseudo marginal is undefined for ablated fits")
    lam = 1.0 / model.noise_diag
    z, m = model.z, model.m_vec
    logdet_A = 2.0 * np.sum(np.log(np.diag(model.chol)))
    # centring f at the prior mean moves these terms out of the integral
    C_centred = centred_loss_constant(model.y, m, z, model.w_vec, model.grad_vec, model.sigma2, model.noise_diag)
    quad = z @ (lam * z) - z @ model.alpha
    return float(-0.5 * (logdet_A + np.sum(np.log(lam))) + 0.5 * quad - 0.5 * C_centred)

"""Sparse variational robust-conjugate GP with inducing inputs.

With ``Lam = (sigma^2 J_w)^{-1}``, ``nu = Lam z`` and ``K_uf`` of shape
``m x n`` the optimal Gaussian over inducing values has

    mu_u    = m(U) + K_uu P^{-1} K_uf nu
    Sigma_u = K_uu P^{-1} K_uu,        P = K_uu + K_uf Lam K_fu.

All solves go through ``L = chol(K_uu)`` and ``L_B = chol(I + A A')`` with
``A = L^{-1} K_uf Lam^{1/2}``, so that ``P = L L_B L_B' L'``.

The variational objective is

    1/2 b' P^{-1} b + 1/2 log det K_uu - 1/2 log det P
      - 1/2 sum_i Lam_i (k_ii - [K_fu K_uu^{-1} K_uf]_ii) - 1/2 C

with ``b = K_uf nu`` and ``C`` the loss constant after centring at the
prior mean. For ``U = X`` it equals the log pseudo marginal of the exact
fit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize

from .core import (
    Ablation,
    GaussianBelief,
    RobustTerms,
    centred_loss_constant,
    cholesky_lower,
    robust_terms,
)
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
from .weights import ConstantWeight, WeightFunction


@dataclass(frozen=True, eq=False)
class InducingSet:
    U: np.ndarray
    selection: str = "user"
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "U", as_covariates(self.U, "U"))

    @property
    def m(self) -> int:
        return self.U.shape[0]

    @classmethod
    def subset_of_data(cls, X, m: int, seed: int = 0) -> "InducingSet":
        """Uniform random subset of ``m`` training inputs."""
        X = as_covariates(X)
        if not 1 <= m <= X.shape[0]:
            raise InputError(f"need 1 <= m <= n, got m={m}, n={X.shape[0]}")
        idx = np.sort(np.random.default_rng(seed).choice(X.shape[0], size=m, replace=False))
        return cls(X[idx].copy(), "subset", seed)


def _as_inducing(inducing) -> InducingSet:
    return inducing if isinstance(inducing, InducingSet) else InducingSet(inducing)


@dataclass(frozen=True, eq=False)
class VariationalPosterior:
    U: np.ndarray
    mu_u: np.ndarray
    sigma_u: np.ndarray
    kernel: KernelParams
    mean: MeanFunction
    sigma2: float
    weight: WeightFunction
    K_uu: np.ndarray
    chol_uu: np.ndarray
    chol_B: np.ndarray
    b: np.ndarray
    terms: RobustTerms


@dataclass(frozen=True, eq=False)
class _Pieces:
    terms: RobustTerms
    lam: np.ndarray
    K_uu: np.ndarray
    K_uf: np.ndarray
    L: np.ndarray
    LB: np.ndarray
    b: np.ndarray
    Linv_b: np.ndarray
    c: np.ndarray  # L_B^{-1} L^{-1} b


def _pieces(X, y, kernel, mean, sigma2, weight, U, ablation, tie_beta) -> _Pieces:
    X = as_covariates(X)
    y = as_targets(y, X.shape[0])
    U = as_covariates(U, "U")
    if U.shape[1] != X.shape[1]:
        raise InputError(f"inducing inputs have dimension {U.shape[1]}, data have {X.shape[1]}")
    if U.shape[0] > X.shape[0]:
        raise InputError("more inducing points than data")
    terms = robust_terms(X, y, mean, sigma2, weight, ablation, tie_beta)
    lam = 1.0 / (sigma2 * terms.J_w_diag)
    K_uu = gram_matrix(kernel, U)
    K_uf = cross_gram(kernel, U, X)
    L = cholesky_lower(K_uu, "K_uu")
    A = solve_triangular(L, K_uf * np.sqrt(lam), lower=True)
    B = A @ A.T
    B[np.diag_indices_from(B)] += 1.0
    LB = cholesky_lower(B, "I + A A'")
    b = K_uf @ (lam * terms.z)
    Linv_b = solve_triangular(L, b, lower=True)
    c = solve_triangular(LB, Linv_b, lower=True)
    return _Pieces(terms, lam, K_uu, K_uf, L, LB, b, Linv_b, c)


def rcsvgp_fit(
    X,
    y,
    kernel: KernelParams,
    mean: MeanFunction | None = None,
    sigma2: float = 1.0,
    weight: WeightFunction | None = None,
    inducing=None,
    ablation: Ablation = Ablation(),
    tie_beta: bool = True,
) -> VariationalPosterior:
    """Optimal variational posterior over the inducing values."""
    mean = ZeroMean() if mean is None else mean
    weight = ConstantWeight() if weight is None else weight
    if inducing is None:
        raise InputError("an inducing set is required")
    ind = _as_inducing(inducing)
    pc = _pieces(X, y, kernel, mean, sigma2, weight, ind.U, ablation, tie_beta)
    # Sigma_u = L B^{-1} L',  mu_u - m(U) = L B^{-1} L^{-1} b
    LBinv_Lt = solve_triangular(pc.LB, pc.L.T, lower=True)
    sigma_u = LBinv_Lt.T @ LBinv_Lt
    sigma_u = 0.5 * (sigma_u + sigma_u.T)
    mu_u = mean_vector(mean, ind.U) + pc.L @ solve_triangular(pc.LB.T, pc.c, lower=False)
    return VariationalPosterior(
        ind.U, mu_u, sigma_u, kernel, mean, float(sigma2), pc.terms.weight,
        pc.K_uu, pc.L, pc.LB, pc.b, pc.terms,
    )


def rcsvgp_predict(vp: VariationalPosterior, X_star, include_noise: bool = False) -> GaussianBelief:
    """Predictive ``m(x) + k_u' P^{-1} b`` with covariance ``k - k_u' (K_uu^{-1} - P^{-1}) k_u``."""
    X_star = as_covariates(X_star, "X_star")
    if X_star.shape[1] != vp.U.shape[1]:
        raise InputError(f"X_star has dimension {X_star.shape[1]}, model has {vp.U.shape[1]}")
    K_us = cross_gram(vp.kernel, vp.U, X_star)
    V = solve_triangular(vp.chol_uu, K_us, lower=True)
    W = solve_triangular(vp.chol_B, V, lower=True)
    c = solve_triangular(vp.chol_B, solve_triangular(vp.chol_uu, vp.b, lower=True), lower=True)
    mu = mean_vector(vp.mean, X_star) + W.T @ c
    S = cross_gram(vp.kernel, X_star, X_star) - V.T @ V + W.T @ W
    S = 0.5 * (S + S.T)
    if include_noise:
        S[np.diag_indices_from(S)] += vp.sigma2
    return GaussianBelief(mu, S)


def rcsvgp_predict_mean_var(vp: VariationalPosterior, X_star) -> tuple[np.ndarray, np.ndarray]:
    X_star = as_covariates(X_star, "X_star")
    K_us = cross_gram(vp.kernel, vp.U, X_star)
    V = solve_triangular(vp.chol_uu, K_us, lower=True)
    W = solve_triangular(vp.chol_B, V, lower=True)
    c = solve_triangular(vp.chol_B, solve_triangular(vp.chol_uu, vp.b, lower=True), lower=True)
    mu = mean_vector(vp.mean, X_star) + W.T @ c
    var = vp.kernel.signal_variance - np.sum(V**2, axis=0) + np.sum(W**2, axis=0)
    return mu, var


@dataclass(frozen=True)
class ElboParts:
    fit_term: float
    log_det_term: float
    trace_term: float
    constant_term: float

    @property
    def total(self) -> float:
        return self.fit_term + self.log_det_term + self.trace_term + self.constant_term


def _elbo_from_pieces(pc: _Pieces, X, y, kernel, sigma2) -> ElboParts:
    t = pc.terms
    fit_term = 0.5 * float(pc.c @ pc.c)
    # log det K_uu - log det P = -log det B
    log_det = -float(np.sum(np.log(np.diag(pc.LB))))
    Q_diag = np.sum(solve_triangular(pc.L, pc.K_uf, lower=True) ** 2, axis=0)
    # the Schur complement diagonal is non-negative; clip round-off
    gap = np.maximum(kernel.signal_variance - Q_diag, 0.0)
    trace = -0.5 * float(np.sum(pc.lam * gap))
    const = -0.5 * centred_loss_constant(as_targets(y), t.m_vec, t.z, t.w_vec, t.grad_vec, sigma2, 1.0 / pc.lam)
    return ElboParts(fit_term, log_det, trace, const)


def elbo_parts(X, y, kernel, mean=None, sigma2=1.0, weight=None, U=None, ablation=Ablation(), tie_beta=True) -> ElboParts:
    mean = ZeroMean() if mean is None else mean
    weight = ConstantWeight() if weight is None else weight
    if U is None:
        raise InputError("inducing inputs are required")
    pc = _pieces(X, y, kernel, mean, sigma2, weight, _as_inducing(U).U, ablation, tie_beta)
    return _elbo_from_pieces(pc, X, y, kernel, sigma2)


def elbo_objective(X, y, kernel, mean=None, sigma2=1.0, weight=None, U=None, ablation=Ablation(), tie_beta=True) -> float:
    """Variational objective (to be maximised) for inducing inputs ``U``."""
    return elbo_parts(X, y, kernel, mean, sigma2, weight, U, ablation, tie_beta).total


def elbo_grad_U(X, y, kernel, mean=None, sigma2=1.0, weight=None, U=None, ablation=Ablation(), tie_beta=True):
    """Objective and its analytic gradient with respect to every inducing coordinate."""
    mean = ZeroMean() if mean is None else mean
    weight = ConstantWeight() if weight is None else weight
    X = as_covariates(X)
    U = _as_inducing(U).U
    pc = _pieces(X, y, kernel, mean, sigma2, weight, U, ablation, tie_beta)
    value = _elbo_from_pieces(pc, X, y, kernel, sigma2).total

    m = U.shape[0]
    lam, K_uf = pc.lam, pc.K_uf
    nu = lam * pc.terms.z
    a = _P_solve(pc, pc.b)
    Pinv = _P_solve(pc, np.eye(m))
    Kuu_inv = cho_solve((pc.L, True), np.eye(m))
    A_ = cho_solve((pc.L, True), K_uf)
    KufL = K_uf * lam
    G_uf = np.outer(a, nu) - np.outer(a, a @ KufL) - Pinv @ KufL + A_ * lam
    G_uu = -0.5 * np.outer(a, a) + 0.5 * Kuu_inv - 0.5 * Pinv - 0.5 * (A_ * lam) @ A_.T
    G_uu = 0.5 * (G_uu + G_uu.T)

    ls2 = np.broadcast_to(np.asarray(kernel.lengthscale, dtype=float) ** 2, (U.shape[1],))
    Kuu0 = cross_gram(kernel, U, U)
    grad = np.empty_like(U)
    for k in range(U.shape[1]):
        # d k(u_i, x) / d u_ik = -(u_ik - x_k) / l_k^2 k(u_i, x)
        dUf = -(U[:, k][:, None] - X[:, k][None, :]) / ls2[k] * K_uf
        dUU = -(U[:, k][:, None] - U[:, k][None, :]) / ls2[k] * Kuu0
        grad[:, k] = np.sum(G_uf * dUf, axis=1) + 2.0 * np.sum(G_uu * dUU, axis=1)
    return value, grad


def _P_solve(pc: _Pieces, B):
    # P^{-1} = L^{-T} L_B^{-T} L_B^{-1} L^{-1}
    t = solve_triangular(pc.L, B, lower=True)
    t = solve_triangular(pc.LB, t, lower=True)
    t = solve_triangular(pc.LB.T, t, lower=False)
    return solve_triangular(pc.L.T, t, lower=False)


# ---------------------------------------------------------------------------
# Optimisation of inducing inputs (and optionally kernel / noise)
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class InducingConfig:
    """Settings for :func:`optimize_inducing`.

    ``m=None`` uses ``ceil(sqrt(n))`` inducing points. Kernel
    hyperparameters are co-optimised by default; ``sigma2`` is held fixed
    unless ``optimise_sigma2`` is set.
    """

    m: int | None = None
    seed: int = 0
    kernel: KernelParams | None = None
    sigma2: float | None = None
    mean: MeanFunction = field(default_factory=ZeroMean)
    weight_family: object = "imq"
    epsilon: float = 0.05
    optimise_kernel: bool = True
    optimise_sigma2: bool = False
    max_iter: int = 200
    fd_step: float = 1e-6
    ablation: Ablation = Ablation()


@dataclass(frozen=True, eq=False)
class InducingResult:
    U: np.ndarray
    kernel: KernelParams
    sigma2: float
    weight: WeightFunction
    objective: float
    initial_objective: float
    trace: list
    warning: str | None = None
    ablation: Ablation = Ablation()

    def posterior(self, X, y, mean: MeanFunction | None = None) -> VariationalPosterior:
        return rcsvgp_fit(X, y, self.kernel, mean, self.sigma2, self.weight, self.U, self.ablation)


def optimize_inducing(X, y, config: InducingConfig = InducingConfig()) -> InducingResult:
    """L-BFGS-B ascent of the variational objective over inducing inputs.

    Inducing gradients are analytic; log kernel and noise parameters use
    central differences. ``c`` is chosen once from the data and kept.
    """
    from .selection import default_start, weight_for_family

    X = as_covariates(X)
    y = as_targets(y, X.shape[0])
    n, d = X.shape
    m = config.m if config.m is not None else int(math.ceil(math.sqrt(n)))
    if not 1 <= m <= n:
        raise InputError(f"need 1 <= m <= n, got m={m}, n={n}")
    k0, s0 = default_start(X, y)
    kernel0 = config.kernel if config.kernel is not None else k0
    sigma0 = float(config.sigma2) if config.sigma2 is not None else s0
    if not kernel0.isotropic:
        raise InputError("inducing optimisation supports isotropic lengthscales only")
    weight = weight_for_family(config.weight_family, X, y, config.mean, config.epsilon)
    U0 = InducingSet.subset_of_data(X, m, config.seed).U
    jitter = kernel0.jitter
    hyp0 = np.log([float(kernel0.lengthscale), kernel0.signal_variance, sigma0])
    hyp_free = ([0, 1] if config.optimise_kernel else []) + ([2] if config.optimise_sigma2 else [])

    def unpack(v):
        U = v[: m * d].reshape(m, d)
        hyp = hyp0.copy()
        hyp[hyp_free] = v[m * d:]
        s2 = math.exp(hyp[2]) if config.optimise_sigma2 else sigma0
        kp = KernelParams(math.exp(hyp[0]), math.exp(hyp[1]), jitter) if config.optimise_kernel else kernel0
        return U, kp, s2

    def objective(v):
        U, kp, s2 = unpack(v)
        return elbo_objective(X, y, kp, config.mean, s2, weight, U, config.ablation)

    v0 = np.concatenate([U0.ravel(), hyp0[hyp_free]])
    initial = objective(v0)
    if not np.isfinite(initial):
        raise InputError("variational objective is not finite at the initial inducing set")
    penalty = abs(initial) * 10.0 + 1e6
    seen = {}

    def neg(v):
        U, kp, s2 = unpack(v)
        try:
            val, gU = elbo_grad_U(X, y, kp, config.mean, s2, weight, U, config.ablation)
            gh = np.empty(len(hyp_free))
            for j in range(len(hyp_free)):
                e = np.zeros_like(v)
                e[m * d + j] = config.fd_step
                gh[j] = (objective(v + e) - objective(v - e)) / (2 * config.fd_step)
        except NumericalError:
            return penalty, np.zeros_like(v)
        if not np.isfinite(val):
            return penalty, np.zeros_like(v)
        seen[v.tobytes()] = val
        return -val, -np.concatenate([gU.ravel(), gh])

    trace = [(0, initial)]

    def record(vk):
        if vk.tobytes() in seen:
            trace.append((len(trace), seen[vk.tobytes()]))

    bounds = [(None, None)] * (m * d) + [(hyp0[k] - 3 * math.log(10), hyp0[k] + 3 * math.log(10)) for k in hyp_free]
    res = minimize(neg, v0, jac=True, method="L-BFGS-B", bounds=bounds, callback=record,
                   options={"maxiter": config.max_iter})
    best = -float(res.fun)
    warning = None
    v = res.x
    if not np.isfinite(best) or best <= initial or best == -penalty:
        warning = "optimiser did not improve on the initial inducing set"
        v, best = v0, initial
    U, kp, s2 = unpack(v)
    return InducingResult(U, kp, s2, weight.with_beta(math.sqrt(s2 / 2.0)), best, initial, trace, warning,
                          config.ablation)

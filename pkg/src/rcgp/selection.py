"""Leave-one-out predictive objective and hyperparameter search.

The closed-form leave-one-out predictive of a robust fit needs only
``(K + sigma^2 J_w)^{-1} z`` and the diagonal of ``(K + sigma^2 J_w)^{-1}``,
both available from the fit's Cholesky factor.

Hyperparameters ``(log lengthscale, log signal_variance, log sigma^2)``
are searched with L-BFGS-B. During the search the soft threshold ``c`` is
frozen at its initial data-derived value while ``beta`` follows
``sigma / sqrt(2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack
from scipy.optimize import minimize

from .core import LOG_2PI, Ablation, FittedModel, fit, gp_log_marginal_likelihood
from .errors import InputError, NumericalError
from .kernels import (
    KernelParams,
    MeanFunction,
    ZeroMean,
    as_covariates,
    as_targets,
    gram_log_derivatives,
    mean_vector,
    scaled_sqdist,
)
from .weights import (
    ConstantWeight,
    HeteroskedasticWeight,
    IMQWeight,
    SEWeight,
    ThresholdRule,
    WeightFunction,
    select_c,
)

OBJECTIVES = ("loo", "marginal_likelihood")


@dataclass(frozen=True)
class LooComponents:
    mu: np.ndarray
    var_latent: np.ndarray
    var_pred: np.ndarray

    def log_densities(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return -0.5 * (LOG_2PI + np.log(self.var_pred) + (y - self.mu) ** 2 / self.var_pred)


def _inverse(model: FittedModel) -> np.ndarray:
    """``A^{-1}`` from the fit's Cholesky factor."""
    inv, info = lapack.dpotri(model.chol, lower=1)
    if info != 0:
        raise NumericalError(f"inverse from Cholesky factor failed (info={info})")
    low = np.tril(inv)
    return low + np.tril(inv, -1).T


@dataclass(frozen=True)
class _LooParts:
    Ainv: np.ndarray
    c: np.ndarray  # diag(A^{-1})
    s: np.ndarray  # diag(K A^{-1})
    v: np.ndarray  # latent leave-one-out variance
    gamma: np.ndarray  # K alpha


def _loo_parts(model: FittedModel) -> _LooParts:
    # v = 1/c - D and mu = z + m - alpha/c cancel catastrophically when a
    # point's noise D_i dwarfs the kernel scale; the equivalent forms
    # v = diag(K A^-1) / c and mu = m + K alpha - alpha v do not
    Ainv = _inverse(model)
    c = np.diag(Ainv).copy()
    s = np.sum(model.K * Ainv, axis=1)
    return _LooParts(Ainv, c, s, s / c, model.K @ model.alpha)


def loo_components(model: FittedModel) -> LooComponents:
    """Leave-one-out predictive means and variances from the fit's factor."""
    if model.n < 2:
        raise InputError("leave-one-out needs at least two points")
    lp = _loo_parts(model)
    mu = model.m_vec + lp.gamma - model.alpha * lp.v
    return LooComponents(mu, lp.v, lp.v + model.sigma2)


def loo_objective(model: FittedModel) -> float:
    """``sum_i log N(y_i; mu_i, var_latent_i + sigma^2)``."""
    return float(np.sum(loo_components(model).log_densities(model.y)))


# ---------------------------------------------------------------------------
# Analytic gradients in (log lengthscale, log signal_variance, log sigma^2)
# ---------------------------------------------------------------------------


def _noise_log_sigma2_derivative(model: FittedModel) -> np.ndarray:
    # with beta tied to sigma / sqrt(2), J_w does not depend on sigma^2 except
    # for the heteroskedastic weight, whose noise sigma^2 J_w = r(x)^2 is fixed
    d = model.noise_diag
    if isinstance(model.weight, HeteroskedasticWeight) and not model.ablation.disable_noise_reweighting:
        return np.zeros_like(d)
    return d.copy()


def _shift_log_sigma2_derivative(model: FittedModel) -> np.ndarray:
    # m_w - m = sigma^2 g with g free of sigma^2 (c frozen)
    return model.m_w - model.m_vec


def loo_objective_and_grad(model: FittedModel) -> tuple[float, np.ndarray]:
    """LOO objective and its gradient in the three log hyperparameters.

    Requires a tied fit (``beta = sigma / sqrt(2)``) with an isotropic kernel.
    """
    if model.n < 2:
        raise InputError("leave-one-out needs at least two points")
    lp = _loo_parts(model)
    Ainv, c, sd, v = lp.Ainv, lp.c, lp.s, lp.v
    K, a = model.K, model.alpha
    s2 = model.sigma2
    e = model.y - model.m_vec - lp.gamma + a * v
    p = v + s2
    obj = float(-0.5 * np.sum(LOG_2PI + np.log(p) + e**2 / p))

    _, dK_ls, dK_s2 = gram_log_derivatives(model.kernel, model.X)
    D = model.noise_diag

    def directional(dc, dsd, da, dK_a, ds2):
        dv = dsd / c - sd * dc / c**2
        de = -(dK_a + K @ da) + da * v + a * dv
        dp = dv + ds2
        return float(-0.5 * np.sum(dp / p + 2.0 * e * de / p - e**2 * dp / p**2))

    grads = []
    for dK in (dK_ls, dK_s2):
        # M = A^-1 dK A^-1 enters through diag(M) and diag(K M); since
        # K = A - D the latter is diag(dK A^-1) - D diag(M), so d diag(K A^-1)
        # reduces to D diag(M) and one product per direction suffices
        diag_M = np.sum((Ainv @ dK) * Ainv, axis=1)
        dK_a = dK @ a
        grads.append(directional(-diag_M, D * diag_M, -(Ainv @ dK_a), dK_a, 0.0))
    dd = _noise_log_sigma2_derivative(model)
    # noise direction: the same identity would cancel for heavily down-weighted
    # points, so diag(K M) is formed explicitly
    M = (Ainv * dd) @ Ainv
    dz = -_shift_log_sigma2_derivative(model)
    da = Ainv @ (dz - dd * a)
    grads.append(directional(-np.diag(M), -np.sum(K * M, axis=1), da, np.zeros(model.n), s2))
    return obj, np.array(grads)


def log_ml_and_grad(model: FittedModel) -> tuple[float, np.ndarray]:
    """Standard-GP log marginal likelihood and its log-hyperparameter gradient."""
    obj = gp_log_marginal_likelihood(model)
    Ainv = _inverse(model)
    W = np.outer(model.alpha, model.alpha) - Ainv
    _, dK_ls, dK_s2 = gram_log_derivatives(model.kernel, model.X)
    g = [0.5 * np.sum(W * dK_ls), 0.5 * np.sum(W * dK_s2), 0.5 * model.sigma2 * np.trace(W)]
    return obj, np.array(g)


# ---------------------------------------------------------------------------
# Search
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HyperSearchConfig:
    """Settings for :func:`optimize_hyperparams`.

    ``initial_kernel`` / ``initial_sigma2`` default to a data-driven start:
    median pairwise distance, target variance and a tenth of it.
    ``gradient`` is ``"analytic"``, ``"finite-difference"`` or ``"auto"``
    (analytic whenever the weight family supports it).
    """

    initial_kernel: KernelParams | None = None
    initial_sigma2: float | None = None
    objective: str = "loo"
    max_iter: int = 200
    fd_step: float = 1e-6
    tol: float = 1e-8
    restarts: int = 3
    seed: int = 0
    gradient: str = "auto"
    epsilon: float = ThresholdRule().epsilon
    fixed_sigma2: bool = False

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise InputError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.gradient not in ("analytic", "finite-difference", "auto"):
            raise InputError(f"unknown gradient mode {self.gradient!r}")
        if self.fd_step <= 0 or self.tol <= 0:
            raise InputError("fd_step and tol must be positive")
        if self.max_iter < 1 or self.restarts < 0:
            raise InputError("max_iter must be >= 1 and restarts >= 0")


@dataclass(frozen=True, eq=False)
class HyperSearchResult:
    kernel: KernelParams
    sigma2: float
    weight: WeightFunction
    objective: float
    initial_objective: float
    trace: list = field(default_factory=list)
    warning: str | None = None

    @property
    def theta(self) -> tuple[float, float]:
        return float(self.kernel.lengthscale), self.kernel.signal_variance


def weight_for_family(family, X, y, mean: MeanFunction, epsilon: float = ThresholdRule().epsilon) -> WeightFunction:
    """Turn a family name into a weight with ``c`` chosen from the data.

    Weight instances pass through unchanged.
    """
    if not isinstance(family, str):
        return family
    name = family.lower()
    if name in ("constant", "gp", "none"):
        return ConstantWeight()
    resid = np.abs(as_targets(y) - mean_vector(mean, X))
    c = select_c(resid, ThresholdRule(epsilon))
    if name == "imq":
        return IMQWeight(1.0, c)
    if name == "se":
        return SEWeight(1.0, c)
    raise InputError(f"unknown weight family {family!r}")


def default_start(X, y) -> tuple[KernelParams, float]:
    X = as_covariates(X)
    y = as_targets(y, X.shape[0])
    unit = KernelParams(1.0, 1.0)
    d2 = scaled_sqdist(unit, X, X)[np.triu_indices(X.shape[0], 1)]
    d2 = d2[d2 > 0]
    ls = math.sqrt(float(np.median(d2))) if d2.size else 1.0
    v = float(np.var(y))
    v = v if v > 0 else 1.0
    return KernelParams(ls, v), 0.1 * v


def _supports_analytic(weight, ablation: Ablation, objective: str) -> bool:
    if objective == "marginal_likelihood":
        return True
    return isinstance(weight, (ConstantWeight, IMQWeight, SEWeight, HeteroskedasticWeight))


def optimize_hyperparams(
    X,
    y,
    mean: MeanFunction | None = None,
    weight_family="imq",
    config: HyperSearchConfig = HyperSearchConfig(),
    ablation: Ablation = Ablation(),
) -> HyperSearchResult:
    """Maximise the chosen objective over log hyperparameters.

    Returns the best point over the initial start and ``config.restarts``
    starts perturbed by +-1 in each log coordinate. ``trace`` holds
    ``(iteration, objective)`` pairs of the winning run.
    """
    X = as_covariates(X)
    y = as_targets(y, X.shape[0])
    if X.shape[0] < 2:
        raise InputError("hyperparameter search needs at least two points")
    mean = ZeroMean() if mean is None else mean
    weight = weight_for_family(weight_family, X, y, mean, config.epsilon)
    if config.objective == "marginal_likelihood" and not isinstance(weight, ConstantWeight):
        raise InputError("the marginal-likelihood objective is for the standard GP only")

    k0, s0 = default_start(X, y)
    if config.initial_kernel is not None:
        k0 = config.initial_kernel
    if config.initial_sigma2 is not None:
        s0 = float(config.initial_sigma2)
    if not k0.isotropic:
        raise InputError("hyperparameter search supports isotropic lengthscales only")
    jitter = k0.jitter
    theta0 = np.log([float(k0.lengthscale), k0.signal_variance, s0])
    bounds = [
        (theta0[0] - 3 * math.log(10), theta0[0] + 3 * math.log(10)),
        (theta0[1] - 4 * math.log(10), theta0[1] + 4 * math.log(10)),
        (theta0[2] - 6 * math.log(10), theta0[2] + 3 * math.log(10)),
    ]
    free = [0, 1] if config.fixed_sigma2 else [0, 1, 2]
    analytic = config.gradient == "analytic" or (
        config.gradient == "auto" and _supports_analytic(weight, ablation, config.objective)
    )

    def noise(theta) -> float:
        return s0 if config.fixed_sigma2 else math.exp(theta[2])

    def build(theta):
        kp = KernelParams(math.exp(theta[0]), math.exp(theta[1]), jitter)
        return fit(X, y, kp, mean, noise(theta), weight, ablation)

    def value(theta) -> float:
        model = build(theta)
        if config.objective == "loo":
            return loo_objective(model)
        return gp_log_marginal_likelihood(model)

    def value_grad(theta):
        model = build(theta)
        if config.objective == "loo":
            return loo_objective_and_grad(model)
        return log_ml_and_grad(model)

    try:
        initial_obj = value(theta0)
    except NumericalError as exc:
        raise InputError(f"objective cannot be evaluated at the initial point: {exc}") from exc
    if not np.isfinite(initial_obj):
        raise InputError("objective is not finite at the initial point")

    penalty = abs(initial_obj) * 10.0 + 1e6

    def neg(free_theta, theta_full):
        theta = theta_full.copy()
        theta[free] = free_theta
        try:
            if analytic:
                v, g = value_grad(theta)
                g = g[free]
            else:
                v = value(theta)
                g = np.empty(len(free))
                for j, k in enumerate(free):
                    h = config.fd_step
                    tp, tm = theta.copy(), theta.copy()
                    tp[k] += h
                    tm[k] -= h
                    g[j] = (value(tp) - value(tm)) / (2 * h)
        except NumericalError:
            return penalty, np.zeros(len(free))
        if not np.isfinite(v) or not np.all(np.isfinite(g)):
            return penalty, np.zeros(len(free))
        return -v, -g

    rng = np.random.default_rng(config.seed)
    starts = [theta0] + [theta0 + rng.choice([-1.0, 1.0], size=3) for _ in range(config.restarts)]
    if config.fixed_sigma2:
        for s in starts:
            s[2] = theta0[2]
    fb = [bounds[k] for k in free]

    best_theta, best_obj, best_trace = theta0, initial_obj, [(0, initial_obj)]
    for start in starts:
        start = np.array([np.clip(start[k], *bounds[k]) for k in range(3)])
        seen = {}

        def fun(free_theta, _start=start, _seen=seen):
            v, g = neg(free_theta, _start)
            _seen[free_theta.tobytes()] = -v
            return v, g

        trace = []

        def record(xk, _seen=seen, _trace=trace):
            if xk.tobytes() in _seen:
                _trace.append((len(_trace) + 1, _seen[xk.tobytes()]))

        res = minimize(
            fun, start[free], jac=True, method="L-BFGS-B", bounds=fb, callback=record,
            options={"maxiter": config.max_iter, "ftol": config.tol, "gtol": 1e-6},
        )
        obj = -float(res.fun)
        if np.isfinite(obj) and obj > best_obj and -obj != penalty:
            theta = start.copy()
            theta[free] = res.x
            first = seen.get(start[free].tobytes(), obj)
            best_theta, best_obj, best_trace = theta, obj, [(0, first)] + trace

    warning = None
    if best_obj <= initial_obj:
        warning = "optimiser did not improve on the initial point"
        best_theta, best_obj = theta0, initial_obj
    kp = KernelParams(math.exp(best_theta[0]), math.exp(best_theta[1]), jitter)
    model = build(best_theta)
    return HyperSearchResult(kp, noise(best_theta), model.weight, best_obj, initial_obj, best_trace, warning)

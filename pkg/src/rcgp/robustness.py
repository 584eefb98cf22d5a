"""Posterior influence functions and outlier generators."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .core import Ablation, FittedModel, GaussianBelief, cholesky_lower, fit, posterior
from .errors import InputError
from .kernels import KernelParams, MeanFunction, ZeroMean, as_covariates, as_targets
from .weights import ConstantWeight, WeightFunction

REGIMES = ("uniform", "asymmetric", "focused")


def kl_gaussian(p: GaussianBelief, q: GaussianBelief) -> float:
    """``KL(p || q)`` between multivariate Gaussians.

    The trace and log-determinant terms are combined as
    ``sum(lam - 1 - log lam)`` over the eigenvalues ``lam`` of
    ``L_q^{-1} Sigma_p L_q^{-T}``. Each summand is non-negative, so nearly
    equal covariances do not suffer the cancellation of ``tr - n - logdet``.
    """
    if p.dim != q.dim:
        raise InputError(f"dimension mismatch: {p.dim} vs {q.dim}")
    Lp = cholesky_lower(p.cov, "covariance of p")
    Lq = cholesky_lower(q.cov, "covariance of q")
    M = solve_triangular(Lq, Lp, lower=True)
    lam = np.linalg.eigvalsh(M @ M.T)
    if np.any(lam <= 0):
        lam = np.maximum(lam, np.finfo(float).tiny)
    dev = lam - 1.0
    spread = float(np.sum(dev - np.log1p(dev)))
    d = solve_triangular(Lq, q.mean - p.mean, lower=True)
    return 0.5 * (spread + float(d @ d))


def pif_gp_closed_form(model: FittedModel, m: int, y_c: float) -> float:
    """Closed-form influence of moving ``y_m`` to ``y_c`` on a standard-GP posterior.

    ``1/2 [(K + sigma^2 I)^{-1} K sigma^-2]_mm (y_m - y_c)^2``.
    """
    if not model.is_standard:
        raise InputError("closed-form influence applies to standard-GP fits only")
    if not 0 <= m < model.n:
        raise InputError(f"index {m} out of range for n={model.n}")
    e = np.zeros(model.n)
    e[m] = 1.0
    # [(K + s2 I)^{-1} K]_mm = 1 - s2 [(K + s2 I)^{-1}]_mm
    Ainv_mm = float(model.solve(e)[m])
    c1 = 0.5 * (1.0 - model.sigma2 * Ainv_mm) / model.sigma2
    return c1 * (model.y[m] - y_c) ** 2


@dataclass(frozen=True, eq=False)
class FitConfig:
    """Fixed-hyperparameter fit settings shared by clean and contaminated fits."""

    kernel: KernelParams
    sigma2: float
    mean: MeanFunction = field(default_factory=ZeroMean)
    weight: WeightFunction = field(default_factory=ConstantWeight)
    ablation: Ablation = Ablation()

    def fit(self, X, y) -> FittedModel:
        return fit(X, y, self.kernel, self.mean, self.sigma2, self.weight, self.ablation)


@dataclass(frozen=True, eq=False)
class PifCurve:
    grid: np.ndarray
    kl: np.ndarray
    contaminated_index: int
    clean_value: float

    @property
    def offsets(self) -> np.ndarray:
        return self.grid - self.clean_value

    def to_csv(self) -> str:
        lines = ["offset,kl"]
        lines += [f"{o:.10g},{k:.10g}" for o, k in zip(self.offsets, self.kl)]
        return "\n".join(lines) + "\n"


def default_offsets(scale: float, n_points: int = 200, low: float = 1e-2, high: float = 1e2) -> np.ndarray:
    """Log-spaced offsets in ``[low, high] * scale``, half negative and half positive."""
    half = n_points // 2
    pos = np.logspace(np.log10(low), np.log10(high), n_points - half) * scale
    neg = -np.logspace(np.log10(low), np.log10(high), half)[::-1] * scale
    return np.concatenate([neg, pos])


def pif_curve(X, y, config: FitConfig, m: int, grid=None) -> PifCurve:
    """KL from the clean posterior to posteriors with ``y_m`` replaced by each grid value.

    Hyperparameters, prior mean and soft threshold are held fixed; the
    weights are recomputed for every contaminated dataset. ``grid`` holds
    contaminated values of ``y_m``; by default ``y_m`` plus
    :func:`default_offsets` scaled by the noise standard deviation.
    """
    X = as_covariates(X)
    y = as_targets(y, X.shape[0])
    if not 0 <= m < y.size:
        raise InputError(f"index {m} out of range for n={y.size}")
    if grid is None:
        grid = y[m] + default_offsets(np.sqrt(config.sigma2))
    grid = np.asarray(grid, dtype=float).reshape(-1)
    if not np.all(np.isfinite(grid)):
        raise InputError("grid must be finite")
    clean = posterior(config.fit(X, y))
    kl = np.empty(grid.size)
    for i, yc in enumerate(grid):
        yy = y.copy()
        yy[m] = yc
        kl[i] = kl_gaussian(clean, posterior(config.fit(X, yy)))
    return PifCurve(grid, kl, m, float(y[m]))


# ---------------------------------------------------------------------------
# Contamination
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ContaminationSpec:
    """One outlier regime.

    ``direction`` applies to the asymmetric regime: ``"subtract"`` shifts
    observations down, ``"add"`` shifts them up.
    """

    regime: str = "uniform"
    fraction: float = 0.10
    seed: int = 0
    direction: str = "subtract"

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise InputError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if not 0.0 <= self.fraction <= 1.0:
            raise InputError(f"fraction must lie in [0, 1], got {self.fraction}")
        if self.direction not in ("subtract", "add"):
            raise InputError(f"direction must be 'subtract' or 'add', got {self.direction!r}")


def n_contaminated(n: int, fraction: float) -> int:
    return int(np.floor(fraction * n + 0.5))


def _mad(a: np.ndarray, axis=0) -> np.ndarray:
    med = np.median(a, axis=axis)
    return np.median(np.abs(a - med), axis=axis)


def contaminate(y, X, spec: ContaminationSpec):
    """Return ``(y_out, X_out, mask)`` with ``round(fraction * n)`` outliers.

    Shift magnitudes are ``U(3 s, 9 s)`` with ``s`` the standard deviation
    of the original ``y``. The focused regime moves flagged inputs next to
    the per-dimension median and sets their targets to
    ``median(y) - 3 s`` plus a small jitter.
    """
    X = as_covariates(X)
    y = as_targets(y, X.shape[0])
    n = y.size
    k = n_contaminated(n, spec.fraction)
    if k > n:
        raise InputError(f"cannot contaminate {k} of {n} points")
    rng = np.random.default_rng(spec.seed)
    y_out, X_out = y.copy(), X.copy()
    mask = np.zeros(n, dtype=bool)
    if k == 0:
        return y_out, X_out, mask
    idx = rng.choice(n, size=k, replace=False)
    mask[idx] = True
    s = float(np.std(y))

    if spec.regime == "focused":
        u = rng.uniform(size=(k, X.shape[1]))
        X_out[idx] = np.median(X, axis=0) + 0.1 * _mad(X) * u
        u_y = rng.uniform(size=k)
        y_out[idx] = np.median(y) - 3.0 * s + 0.1 * float(_mad(y)) * u_y
        return y_out, X_out, mask

    z = rng.uniform(3.0 * s, 9.0 * s, size=k)
    if spec.regime == "uniform":
        sign = np.ones(k)
        sign[k // 2:] = -1.0
        sign = rng.permutation(sign)
    else:
        sign = np.full(k, 1.0 if spec.direction == "add" else -1.0)
    y_out[idx] += sign * z
    return y_out, X_out, mask

"""Weighting functions ``w(x, y)`` for the robust score-matching loss.

Each weight exposes its value and ``d/dy log w(x, y)^2``, both as
functions of the residual ``y - m(x)`` (and of ``x`` for the
heteroskedastic weight). ``beta`` is the learning rate folded into the
weight; models re-tie it to ``sigma / sqrt(2)`` whenever the noise
variance changes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .errors import InputError

C_FLOOR = 1e-12
DEFAULT_EPSILON = 0.05


def tied_beta(sigma2: float) -> float:
    """The learning rate ``sigma / sqrt(2)`` that makes a constant weight a standard GP."""
    return math.sqrt(sigma2 / 2.0)


def _check_positive(name, value):
    if not np.isfinite(value) or value <= 0:
        raise InputError(f"{name} must be positive, got {value}")


@dataclass(frozen=True)
class ConstantWeight:
    """``w = beta``; with ``beta = sigma/sqrt(2)`` this is the standard GP."""

    beta: float = 1.0

    def __post_init__(self):
        _check_positive("beta", self.beta)

    def values(self, residual, X=None) -> np.ndarray:
        return np.full(np.shape(residual), float(self.beta))

    def grad_log_sq(self, residual, X=None) -> np.ndarray:
        return np.zeros(np.shape(residual))

    def with_beta(self, beta: float):
        return replace(self, beta=beta)


@dataclass(frozen=True)
class IMQWeight:
    """Inverse multi-quadric weight ``beta (1 + r^2/c^2)^(-1/2)``, ``r = y - m(x)``."""

    beta: float = 1.0
    c: float = 1.0

    def __post_init__(self):
        _check_positive("beta", self.beta)
        _check_positive("c", self.c)

    def values(self, residual, X=None) -> np.ndarray:
        r = np.asarray(residual, dtype=float)
        return self.beta / np.sqrt(1.0 + (r / self.c) ** 2)

    def grad_log_sq(self, residual, X=None) -> np.ndarray:
        r = np.asarray(residual, dtype=float)
        return -2.0 * r / (self.c**2 + r**2)

    def with_beta(self, beta: float):
        return replace(self, beta=beta)


@dataclass(frozen=True)
class SEWeight:
    """Squared-exponential weight ``beta exp(-r^2 / (2 c^2))``."""

    beta: float = 1.0
    c: float = 1.0

    def __post_init__(self):
        _check_positive("beta", self.beta)
        _check_positive("c", self.c)

    def values(self, residual, X=None) -> np.ndarray:
        r = np.asarray(residual, dtype=float)
        return self.beta * np.exp(-0.5 * (r / self.c) ** 2)

    def grad_log_sq(self, residual, X=None) -> np.ndarray:
        r = np.asarray(residual, dtype=float)
        return -2.0 * r / self.c**2

    def with_beta(self, beta: float):
        return replace(self, beta=beta)


@dataclass(frozen=True)
class HeteroskedasticWeight:
    """Weight ``sigma^2 / (sqrt(2) r(x))`` of a heteroskedastic GP with noise rate ``r``.

    Written in terms of the tied learning rate (``sigma^2 = 2 beta^2``) as
    ``sqrt(2) beta^2 / r(x)``. ``rate`` maps an ``(n, d)`` covariate array
    to ``n`` positive values.
    """

    beta: float
    rate: Callable[[np.ndarray], np.ndarray]

    def __post_init__(self):
        _check_positive("beta", self.beta)

    def values(self, residual, X=None) -> np.ndarray:
        if X is None:
            raise InputError("the heteroskedastic weight needs covariates")
        r = np.asarray(self.rate(X), dtype=float).reshape(np.shape(residual))
        if np.any(r <= 0) or not np.all(np.isfinite(r)):
            raise InputError("noise rate must be positive and finite")
        return math.sqrt(2.0) * self.beta**2 / r

    def grad_log_sq(self, residual, X=None) -> np.ndarray:
        return np.zeros(np.shape(residual))

    def with_beta(self, beta: float):
        return replace(self, beta=beta)


WeightFunction = ConstantWeight | IMQWeight | SEWeight | HeteroskedasticWeight


def weight_eval(w: WeightFunction, m_x: float, y: float, x=None) -> float:
    """``w(x, y)`` given the prior mean ``m_x`` at the covariate."""
    X = None if x is None else np.atleast_2d(np.asarray(x, dtype=float))
    return float(w.values(np.array([y - m_x]), X)[0])


def grad_log_w_squared(w: WeightFunction, m_x: float, y: float, x=None) -> float:
    """``d/dy log w(x, y)^2``."""
    X = None if x is None else np.atleast_2d(np.asarray(x, dtype=float))
    return float(w.grad_log_sq(np.array([y - m_x]), X)[0])


def weight_vector(w: WeightFunction, m_vec, y, X=None) -> tuple[np.ndarray, np.ndarray]:
    """Weights and log-square gradients at every training point."""
    m_vec = np.asarray(m_vec, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if m_vec.shape != y.shape:
        raise InputError(f"mean vector has length {m_vec.size}, targets have {y.size}")
    r = y - m_vec
    return w.values(r, X), w.grad_log_sq(r, X)


@dataclass(frozen=True)
class ThresholdRule:
    """``c`` is the ``(1 - epsilon)`` quantile of absolute residuals."""

    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise InputError(f"epsilon must lie in [0, 1], got {self.epsilon}")


def select_c(residuals, rule: ThresholdRule = ThresholdRule()) -> float:
    """Soft threshold from absolute residuals, nearest-rank quantile.

    The quantile is element ``ceil((1 - epsilon) n)`` (1-based) of the
    ascending sort; ``epsilon = 1`` gives the minimum. The result is
    floored at ``1e-12`` so the weight stays finite.
    """
    r = np.abs(np.asarray(residuals, dtype=float).reshape(-1))
    if r.size == 0:
        raise InputError("select_c needs at least one residual")
    if not np.all(np.isfinite(r)):
        raise InputError("residuals must be finite")
    n = r.size
    # guard against 0.95 * n landing a hair above an integer
    rank = math.ceil((1.0 - rule.epsilon) * n - 1e-9)
    rank = min(max(rank, 1), n)
    return max(float(np.sort(r)[rank - 1]), C_FLOOR)


@dataclass(frozen=True)
class RobustnessReport:
    """Outcome of the bounded-influence check for a weight."""

    sup_w: float
    sup_y_w2: float
    w_bounded: bool
    y_w2_bounded: bool

    @property
    def robust(self) -> bool:
        return self.w_bounded and self.y_w2_bounded


def check_robustness(
    w: WeightFunction,
    m_x: float = 0.0,
    y_max: float = 1e8,
    n_grid: int = 2001,
    x=None,
) -> RobustnessReport:
    """Check ``sup w < inf`` and ``sup |y| w^2 < inf`` on a log grid.

    The grid covers ``|y - m_x|`` from ``1e-6`` to ``y_max`` with both
    signs. A quantity is declared bounded when its maximum over the final
    decade of the grid does not exceed its maximum over the rest of the
    grid: a function still growing at the edge of ``[0, 1e8]`` is treated
    as unbounded.
    """
    mags = np.concatenate([[0.0], np.logspace(-6, np.log10(y_max), n_grid)])
    tail = mags >= y_max / 10.0
    X = None
    if x is not None:
        X = np.repeat(np.atleast_2d(np.asarray(x, dtype=float)), mags.size, axis=0)

    def bounded(vals: np.ndarray) -> bool:
        if not np.all(np.isfinite(vals)):
            return False
        return float(vals[tail].max()) <= float(vals[~tail].max()) * (1.0 + 1e-9)

    w_ok, yw_ok, sup_w, sup_yw = True, True, 0.0, 0.0
    for sign in (1.0, -1.0):
        r = sign * mags
        wv = w.values(r, X)
        yw2 = np.abs(r + m_x) * wv**2
        w_ok &= bounded(wv)
        yw_ok &= bounded(yw2)
        sup_w = max(sup_w, float(wv.max()))
        sup_yw = max(sup_yw, float(yw2.max()))
    return RobustnessReport(sup_w, sup_yw, bool(w_ok), bool(yw_ok))

"""Bayesian optimisation with GP or robust-GP surrogates.

Objectives are minimised. The surrogate models the negated observations,
so acquisitions are written in maximisation form throughout.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize
from scipy.stats import norm, qmc

from .core import FittedModel, fit, predict_mean_var
from .errors import InputError, NumericalError
from .kernels import ZeroMean
from .selection import HyperSearchConfig, optimize_hyperparams

PI_VAR_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class TestObjective:
    name: str
    bounds: np.ndarray
    global_minimum_value: float
    evaluator: Callable[[np.ndarray], np.ndarray]

    __test__ = False  # not a pytest class

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.asarray(self.evaluator(X), dtype=float)

    @property
    def dim(self) -> int:
        return self.bounds.shape[0]


def _six_hump_camel(X):
    x, xp = X[:, 0], X[:, 1]
    return (4.0 - 2.1 * x**2 + x**4 / 3.0) * x**2 + x * xp + (4.0 * xp**2 - 4.0) * xp**2


def _branin(X):
    x, xp = X[:, 0], X[:, 1]
    return (xp - 5.1 / (4.0 * math.pi**2) * x**2 + 5.0 / math.pi * x - 6.0) ** 2 + 10.0 * (
        1.0 - 1.0 / (8.0 * math.pi)
    ) * np.cos(x) + 10.0


def _mccormick(X):
    x, xp = X[:, 0], X[:, 1]
    return np.sin(x + xp) + (x - xp) ** 2 - 1.5 * x + 2.5 * xp + 1.0


def _rosenbrock(X):
    x, xp = X[:, 0], X[:, 1]
    return 100.0 * (xp - x**2) ** 2 + (x**2 - 1.0) ** 2


TEST_OBJECTIVES = {
    "six-hump-camel": TestObjective("six-hump-camel", np.array([[-2.0, 2.0], [-1.0, 1.0]]), -1.0316, _six_hump_camel),
    "branin": TestObjective("branin", np.array([[-5.0, 10.0], [1.0, 15.0]]), 0.3979, _branin),
    "mccormick": TestObjective("mccormick", np.array([[-1.5, 4.0], [-3.0, 4.0]]), -1.9133, _mccormick),
    "rosenbrock": TestObjective("rosenbrock", np.array([[-5.0, 10.0], [-5.0, 1.0]]), 0.0, _rosenbrock),
}


def get_objective(name: str) -> TestObjective:
    key = name.lower().replace("_", "-")
    if key not in TEST_OBJECTIVES:
        raise InputError(f"unknown objective {name!r}; choose from {sorted(TEST_OBJECTIVES)}")
    return TEST_OBJECTIVES[key]


# ---------------------------------------------------------------------------
# Acquisitions
# ---------------------------------------------------------------------------


def acq_ucb(model: FittedModel, x_star, lam: float = 2.0) -> np.ndarray:
    """``mu + lam * sqrt(var)`` of the latent predictive (variance clamped at 0)."""
    if lam < 0:
        raise InputError("lambda must be non-negative")
    mu, var = predict_mean_var(model, x_star)
    return mu + lam * np.sqrt(np.maximum(var, 0.0))


def acq_pi(model: FittedModel, x_star, incumbent: float) -> np.ndarray:
    """``Phi((mu - incumbent) / sqrt(var))`` with the variance floored at 1e-12."""
    mu, var = predict_mean_var(model, x_star)
    return norm.cdf((mu - incumbent) / np.sqrt(np.maximum(var, PI_VAR_FLOOR)))


def _as_bounds(domain) -> np.ndarray:
    b = np.atleast_2d(np.asarray(domain, dtype=float))
    if b.ndim != 2 or b.shape[1] != 2 or b.shape[0] == 0:
        raise InputError("domain must be a (d, 2) array of [low, high] rows")
    if not np.all(np.isfinite(b)) or np.any(b[:, 1] <= b[:, 0]):
        raise InputError("domain is empty or unbounded")
    return b


def propose_next(acquisition: Callable[[np.ndarray], np.ndarray], domain, budget: int = 2048, seed: int = 0,
                 refine: bool = True) -> np.ndarray:
    """Maximise ``acquisition`` over a box.

    Scrambled Sobol candidates (``budget`` of them, seeded) are scored in
    one batch; ties go to the first candidate. The best candidate is then
    polished by bounded L-BFGS-B and replaced only on strict improvement.
    """
    b = _as_bounds(domain)
    if budget < 1:
        raise InputError("budget must be at least 1")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # non power-of-two sample sizes
        cand = qmc.Sobol(b.shape[0], scramble=True, seed=seed).random(budget)
    cand = b[:, 0] + cand * (b[:, 1] - b[:, 0])
    vals = np.asarray(acquisition(cand), dtype=float).reshape(-1)
    i = int(np.argmax(vals))
    best, best_val = cand[i], vals[i]
    if not refine or budget == 1 or np.all(vals == vals[0]):
        return best.copy()

    def neg(x):
        v = float(acquisition(x[None, :])[0])
        return -v if np.isfinite(v) else np.inf

    res = minimize(neg, best, method="L-BFGS-B", bounds=[tuple(r) for r in b], options={"maxiter": 50})
    if np.isfinite(res.fun) and -res.fun > best_val:
        return np.clip(res.x, b[:, 0], b[:, 1])
    return best.copy()


# ---------------------------------------------------------------------------
# Loop
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class BOState:
    """Trace of one optimisation run.

    ``y_obs`` are the values fed to the surrogate (possibly contaminated),
    ``y_true`` the clean objective values. Regret is ``y_true - g*`` for the
    points proposed by the loop; the initial design is excluded.
    """

    objective: str
    seed: int
    X: list = field(default_factory=list)
    y_obs: list = field(default_factory=list)
    y_true: list = field(default_factory=list)
    contaminated: list = field(default_factory=list)
    regret: list = field(default_factory=list)
    cumulative_regret: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    n_init: int = 0
    aborted: str | None = None

    @property
    def incumbent(self) -> float:
        return float(min(self.y_obs)) if self.y_obs else math.inf

    def as_arrays(self):
        return np.array(self.X), np.array(self.y_obs), np.array(self.y_true)


@dataclass(frozen=True)
class BOConfig:
    surrogate: str = "rcgp"
    acquisition: str = "ucb"
    contamination: float = 0.0
    iterations: int = 50
    seed: int = 0
    lam: float = 2.0
    n_init: int = 5
    budget: int = 2048
    restarts: int = 3
    epsilon: float = 0.05
    standardize_targets: bool = False

    def __post_init__(self):
        if self.surrogate not in ("gp", "rcgp"):
            raise InputError(f"surrogate must be 'gp' or 'rcgp', got {self.surrogate!r}")
        if self.acquisition not in ("ucb", "pi"):
            raise InputError(f"acquisition must be 'ucb' or 'pi', got {self.acquisition!r}")
        if not 0.0 <= self.contamination <= 1.0:
            raise InputError("contamination probability must lie in [0, 1]")
        if self.iterations < 1 or self.n_init < 1:
            raise InputError("iterations and n_init must be at least 1")


def _fit_surrogate(U, t, config: BOConfig, seed: int) -> tuple[FittedModel, float, float]:
    # inputs live in the unit box; targets are the negated observations under a
    # zero prior mean, so points near g = 0 carry the most weight
    mu, sd = 0.0, 1.0
    if config.standardize_targets:
        mu, sd = float(t.mean()), float(t.std())
        sd = sd if sd > 0 else 1.0
    ts = (t - mu) / sd
    if config.surrogate == "gp":
        hc = HyperSearchConfig(objective="marginal_likelihood", restarts=config.restarts, seed=seed)
        family = "constant"
    else:
        hc = HyperSearchConfig(objective="loo", restarts=config.restarts, seed=seed, epsilon=config.epsilon)
        family = "imq"
    res = optimize_hyperparams(U, ts, ZeroMean(), family, hc)
    return fit(U, ts, res.kernel, ZeroMean(), res.sigma2, res.weight), mu, sd


def _contaminate_value(rng, p: float, clean_so_far) -> tuple[float, bool]:
    hit = rng.uniform() < p
    z = 0.0
    s = float(np.std(clean_so_far)) if len(clean_so_far) > 1 else 0.0
    if hit:
        z = rng.uniform(3.0 * s, 9.0 * s)
    return z, bool(hit)


def run_bo(objective: TestObjective | str, config: BOConfig = BOConfig()) -> BOState:
    """Run the loop: fit, propose, evaluate, maybe contaminate, append.

    With probability ``config.contamination`` each evaluation is shifted up
    by ``U(3 s, 9 s)`` where ``s`` is the standard deviation of the clean
    values observed before it.
    """
    obj = get_objective(objective) if isinstance(objective, str) else objective
    b = obj.bounds
    width = b[:, 1] - b[:, 0]
    rng = np.random.default_rng(config.seed)
    state = BOState(obj.name, config.seed, n_init=config.n_init)

    def evaluate(x) -> bool:
        g = float(obj(x[None, :])[0])
        if not np.isfinite(g):
            state.aborted = f"non-finite objective value at {x.tolist()}"
            return False
        return g

    X0 = b[:, 0] + rng.uniform(size=(config.n_init, obj.dim)) * width
    g0 = []
    for x in X0:
        g = evaluate(x)
        if g is False:
            return state
        g0.append(g)
    for x, g in zip(X0, g0):
        z, hit = _contaminate_value(rng, config.contamination, g0)
        state.X.append(x.copy())
        state.y_true.append(g)
        state.y_obs.append(g + z)
        state.contaminated.append(hit)

    cum = 0.0
    for it in range(config.iterations):
        t0 = time.perf_counter()
        X, y_obs, y_true = state.as_arrays()
        U = (X - b[:, 0]) / width
        try:
            model, mu, sd = _fit_surrogate(U, -y_obs, config, config.seed + it)
        except NumericalError as exc:
            state.aborted = f"surrogate fit failed at iteration {it + 1}: {exc}"
            return state
        if config.acquisition == "ucb":
            acq = lambda Z, _m=model: acq_ucb(_m, Z, config.lam)  # noqa: E731
        else:
            inc = float(np.max(model.y))
            acq = lambda Z, _m=model, _i=inc: acq_pi(_m, Z, _i)  # noqa: E731
        u = propose_next(acq, np.column_stack([np.zeros(obj.dim), np.ones(obj.dim)]), config.budget,
                         seed=config.seed * 100003 + it)
        x = b[:, 0] + u * width
        g = evaluate(x)
        if g is False:
            return state
        z, hit = _contaminate_value(rng, config.contamination, state.y_true)
        state.X.append(x)
        state.y_true.append(g)
        state.y_obs.append(g + z)
        state.contaminated.append(hit)
        r = max(g - obj.global_minimum_value, 0.0)
        cum += r
        state.regret.append(r)
        state.cumulative_regret.append(cum)
        state.seconds.append(time.perf_counter() - t0)
    return state

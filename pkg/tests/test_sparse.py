import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rcgp.core import fit, gp_log_marginal_likelihood, log_pseudo_marginal, predict, predict_mean_var
from rcgp.data import Dataset, standardize, synth_generate, train_test_split
from rcgp.errors import InputError
from rcgp.kernels import EmpiricalMean, KernelParams, ZeroMean
from rcgp.robustness import ContaminationSpec, contaminate
from rcgp.sparse import (
    InducingConfig,
    InducingSet,
    elbo_grad_U,
    elbo_objective,
    elbo_parts,
    optimize_inducing,
    rcsvgp_fit,
    rcsvgp_predict,
    rcsvgp_predict_mean_var,
)
from rcgp.weights import ConstantWeight, IMQWeight, select_c

from conftest import random_instance


def weights_for(y):
    return [ConstantWeight(), IMQWeight(1.0, select_c(y))]


@pytest.mark.parametrize("family", [0, 1])
def test_collapse_matches_exact(rng, family):
    X, y, kernel, s2 = random_instance(rng, 15, outliers=2)
    w = weights_for(y)[family]
    exact = fit(X, y, kernel, None, s2, w)
    vp = rcsvgp_fit(X, y, kernel, None, s2, w, X)
    Xs = rng.uniform(-3, 3, (7, 1))
    a, b = predict(exact, Xs), rcsvgp_predict(vp, Xs)
    assert np.max(np.abs(a.mean - b.mean)) < 1e-6
    assert np.max(np.abs(a.cov - b.cov)) < 1e-6
    mu, var = rcsvgp_predict_mean_var(vp, Xs)
    assert np.allclose(mu, b.mean, atol=1e-12) and np.allclose(var, np.diag(b.cov), atol=1e-12)


def test_scalar_inducing_mean():
    vp = rcsvgp_fit([[0.0]], [2.0], KernelParams(1.0, 1.0, 0.0), None, 1.0, None, [[0.0]])
    assert vp.mu_u[0] == pytest.approx(1.0, abs=1e-12)
    assert vp.sigma_u[0, 0] == pytest.approx(0.5, abs=1e-12)


def test_far_point_reverts_to_prior(rng):
    X, y, kernel, s2 = random_instance(rng, 12)
    vp = rcsvgp_fit(X, y, kernel, EmpiricalMean.fit(y), s2, IMQWeight(1.0, 1.0), X[:4])
    mu, var = rcsvgp_predict_mean_var(vp, [[1e3]])
    assert mu[0] == pytest.approx(np.mean(y), abs=1e-10)
    assert var[0] == pytest.approx(kernel.signal_variance, abs=1e-10)


def test_variance_at_inducing_points(rng):
    X, y, kernel, s2 = random_instance(rng, 20)
    U = X[:5]
    vp = rcsvgp_fit(X, y, kernel, None, s2, IMQWeight(1.0, 1.0), U)
    _, var = rcsvgp_predict_mean_var(vp, U)
    assert np.max(np.abs(var - np.diag(vp.sigma_u))) < 1e-6
    assert np.all(var >= -1e-10)


@pytest.mark.parametrize("family", [0, 1])
def test_elbo_at_data_equals_pseudo_marginal(rng, family):
    # the identity is exact without jitter on K_uu; 1e-12 keeps its effect below 1e-6
    X, y, kernel, s2 = random_instance(rng, 18, outliers=2)
    kernel = kernel.with_updates(jitter=1e-12)
    w = weights_for(y)[family]
    assert elbo_objective(X, y, kernel, None, s2, w, X) == pytest.approx(
        log_pseudo_marginal(fit(X, y, kernel, None, s2, w)), abs=1e-6)
    assert abs(elbo_parts(X, y, kernel, None, s2, w, X).trace_term) < 1e-6


def test_collapse_gap_shrinks_with_jitter(rng):
    X, y, kernel, s2 = random_instance(rng, 18)
    gaps = []
    for j in (1e-8, 1e-10):
        k = kernel.with_updates(jitter=j)
        gaps.append(abs(elbo_objective(X, y, k, None, s2, None, X) - log_pseudo_marginal(fit(X, y, k, None, s2))))
    assert gaps[1] < 0.05 * gaps[0] + 1e-9


def test_elbo_at_data_and_marginal_likelihood(rng):
    X, y, kernel, s2 = random_instance(rng, 16)
    kernel = kernel.with_updates(jitter=1e-12)
    n = 16
    gap = elbo_objective(X, y, kernel, None, s2, None, X) - gp_log_marginal_likelihood(fit(X, y, kernel, None, s2))
    assert abs(gap - (0.5 * n * math.log(2 * math.pi * s2) + n)) < 1e-6


def separated_inducing(rng, m, d, min_dist):
    while True:
        U = rng.uniform(-3, 3, (m, d))
        dist = np.sqrt(((U[:, None] - U[None]) ** 2).sum(-1))[np.triu_indices(m, 1)]
        if dist.min() > min_dist:
            return U


def fd_grad(f, U, h=1e-5):
    g = np.empty_like(U)
    for idx in np.ndindex(U.shape):
        e = np.zeros_like(U)
        e[idx] = h
        g[idx] = (f(U + e) - f(U - e)) / (2 * h)
    return g


@pytest.mark.parametrize("d", [1, 2])
def test_elbo_gradient(rng, d):
    X, y, kernel, s2 = random_instance(rng, 25, d=d, outliers=2)
    w = IMQWeight(1.0, select_c(y))
    # near-coincident inducing points make K_uu singular and differences unreliable
    U = separated_inducing(rng, 5, d, 0.3 * kernel.lengthscale)
    val, g = elbo_grad_U(X, y, kernel, None, s2, w, U)
    assert val == pytest.approx(elbo_objective(X, y, kernel, None, s2, w, U), abs=1e-12)
    ref = fd_grad(lambda V: elbo_objective(X, y, kernel, None, s2, w, V), U)
    assert np.max(np.abs(g - ref) / np.maximum(np.abs(ref), 1e-3)) < 1e-4


@given(st.integers(0, 10_000))
def test_trace_term_non_positive(seed):
    r = np.random.default_rng(seed)
    X, y, kernel, s2 = random_instance(r, 12)
    U = r.uniform(-3, 3, (int(r.integers(1, 6)), 1))
    assert elbo_parts(X, y, kernel, None, s2, IMQWeight(1.0, 1.0), U).trace_term <= 0.0


@given(st.integers(0, 10_000))
def test_elbo_permutation_invariant(seed):
    r = np.random.default_rng(seed)
    X, y, kernel, s2 = random_instance(r, 14, outliers=1)
    U = X[:4]
    p = r.permutation(14)
    w = IMQWeight(1.0, select_c(y))
    a = elbo_objective(X, y, kernel, None, s2, w, U)
    b = elbo_objective(X[p], y[p], kernel, None, s2, w, U)
    assert abs(a - b) < 1e-10 * max(1.0, abs(a))


def test_input_errors(rng):
    X, y, kernel, s2 = random_instance(rng, 6)
    with pytest.raises(InputError):
        rcsvgp_fit(X, y, kernel, None, s2)
    with pytest.raises(InputError):
        elbo_objective(X, y, kernel, None, s2, None, np.zeros((7, 1)))
    with pytest.raises(InputError):
        elbo_objective(X, y, kernel, None, s2, None, np.zeros((2, 2)))
    with pytest.raises(InputError):
        InducingSet.subset_of_data(X, 0)
    vp = rcsvgp_fit(X, y, kernel, None, s2, None, X[:2])
    with pytest.raises(InputError):
        rcsvgp_predict(vp, np.zeros((1, 2)))


def test_subset_of_data_is_seeded(rng):
    X = rng.standard_normal((30, 2))
    a, b = InducingSet.subset_of_data(X, 5, 3), InducingSet.subset_of_data(X, 5, 3)
    assert np.array_equal(a.U, b.U) and a.m == 5 and a.selection == "subset"
    assert all(any(np.array_equal(u, x) for x in X) for u in a.U)


# --- optimisation -------------------------------------------------------------


@pytest.fixture(scope="module")
def synthetic():
    return synth_generate(0, 120)


def test_optimiser_improves(synthetic):
    ds = synthetic
    res = optimize_inducing(ds.X, ds.y, InducingConfig(m=5, seed=1))
    assert res.objective >= res.initial_objective
    assert res.U.shape == (5, 1)
    assert res.trace[0] == (0, res.initial_objective)
    vp = res.posterior(ds.X, ds.y)
    assert elbo_objective(ds.X, ds.y, res.kernel, None, res.sigma2, res.weight, res.U) == pytest.approx(
        res.objective, rel=1e-10)
    assert vp.mu_u.shape == (5,)


def test_inducing_points_spread(synthetic):
    ds = synthetic
    U = optimize_inducing(ds.X, ds.y, InducingConfig(m=5, seed=0)).U[:, 0]
    d = np.abs(U[:, None] - U[None, :])[np.triu_indices(5, 1)]
    assert d.min() > 0
    assert U.max() - U.min() > 0.5 * (ds.X.max() - ds.X.min())


def test_fixed_noise_does_not_drift(synthetic):
    ds = synthetic
    res = optimize_inducing(ds.X, ds.y, InducingConfig(m=6, sigma2=0.01))
    assert res.sigma2 == 0.01 and res.weight.beta == math.sqrt(0.01 / 2)
    assert res.objective >= res.initial_objective


def test_optimiser_rejects_bad_m(synthetic):
    with pytest.raises(InputError):
        optimize_inducing(synthetic.X, synthetic.y, InducingConfig(m=500))


def contaminated_split(seed):
    ds = synth_generate(seed, 300)
    rng = np.random.default_rng(seed)
    tr, te = train_test_split(ds.n, 0.2, rng)
    train, test = ds.subset(tr), ds.subset(te)
    y_c, X_c, _ = contaminate(train.y, train.X, ContaminationSpec("uniform", 0.1, seed))
    trs, tes, _ = standardize(Dataset("s", X_c, y_c), test)
    return trs, tes


def heldout_rmse(trs, tes, **kw):
    mean = EmpiricalMean.fit(trs.y)
    vp = optimize_inducing(trs.X, trs.y, InducingConfig(mean=mean, **kw)).posterior(trs.X, trs.y, mean)
    mu, _ = rcsvgp_predict_mean_var(vp, tes.X)
    return float(np.sqrt(np.mean((mu - tes.f_true) ** 2)))


def test_more_inducing_points_help():
    trs, tes = contaminated_split(0)
    assert heldout_rmse(trs, tes, seed=0) <= heldout_rmse(trs, tes, m=2, seed=0)


def test_robust_sparse_beats_plain_sparse():
    trs, tes = contaminated_split(1)
    assert heldout_rmse(trs, tes, weight_family="imq") < heldout_rmse(trs, tes, weight_family="constant")


def test_zero_mean_default(rng):
    X, y, kernel, s2 = random_instance(rng, 10)
    vp = rcsvgp_fit(X, y, kernel, None, s2, None, X[:3])
    assert isinstance(vp.mean, ZeroMean)
    mu_exact, _ = predict_mean_var(fit(X, y, kernel, None, s2), X)
    mu, _ = rcsvgp_predict_mean_var(rcsvgp_fit(X, y, kernel, None, s2, None, X), X)
    assert np.max(np.abs(mu - mu_exact)) < 1e-6

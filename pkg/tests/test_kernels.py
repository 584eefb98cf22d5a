import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rcgp.errors import InputError
from rcgp.kernels import (
    ConstantMean,
    EmpiricalMean,
    KernelParams,
    PolynomialMean,
    ZeroMean,
    cross_gram,
    gram_log_derivatives,
    gram_matrix,
    kernel_eval,
    mean_vector,
)

UNIT = KernelParams(1.0, 1.0, jitter=0.0)
coords = st.floats(-10, 10, allow_nan=False)


def loop_gram(kp, X, Z):
    return np.array([[kernel_eval(kp, x, z) for z in Z] for x in X])


class TestKernelEval:
    def test_identity_point(self):
        assert kernel_eval(UNIT, [0.3], [0.3]) == 1.0

    def test_sqrt2_distance(self):
        assert kernel_eval(UNIT, [0.0], [math.sqrt(2)]) == pytest.approx(math.exp(-1), rel=1e-14)

    def test_two_dimensional_hand_value(self):
        kp = KernelParams(2.0, 3.0)
        assert kernel_eval(kp, [0, 0], [2, 2]) == pytest.approx(3 * math.exp(-1), rel=1e-14)
        by_hand = 3.0 * math.exp(-((0 - 2) ** 2 + (0 - 2) ** 2) / (2 * 2.0**2))
        assert kernel_eval(kp, [0, 0], [2, 2]) == pytest.approx(by_hand, rel=1e-14)

    def test_dimension_mismatch(self):
        with pytest.raises(InputError):
            kernel_eval(UNIT, [0.0], [0.0, 1.0])

    @given(arrays(float, 2, elements=coords), arrays(float, 2, elements=coords))
    def test_exchangeable_bit_exact(self, a, b):
        kp = KernelParams(1.3, 0.7)
        assert kernel_eval(kp, a, b) == kernel_eval(kp, b, a)


class TestKernelParams:
    @pytest.mark.parametrize("kw", [dict(lengthscale=0.0), dict(lengthscale=-1.0), dict(signal_variance=0.0),
                                    dict(jitter=-1e-3), dict(lengthscale=[1.0, -2.0])])
    def test_invalid(self, kw):
        args = dict(lengthscale=1.0, signal_variance=1.0) | kw
        with pytest.raises(InputError):
            KernelParams(**args)

    def test_default_jitter_scales_with_signal_variance(self):
        assert KernelParams(1.0, 4.0).nugget == pytest.approx(4e-8)

    def test_per_dimension_lengthscales(self):
        kp = KernelParams([1.0, 2.0], 1.0)
        assert not kp.isotropic
        assert kernel_eval(kp, [0, 0], [1, 2]) == pytest.approx(math.exp(-0.5 * (1 + 1)))


class TestGram:
    def test_single_point(self):
        assert np.array_equal(gram_matrix(UNIT, [[0.0]]), [[1.0]])

    @given(arrays(float, (6, 2), elements=coords))
    def test_symmetric_exactly(self, X):
        K = gram_matrix(KernelParams(0.9, 1.7), X)
        assert np.array_equal(K, K.T)

    def test_psd_random(self, rng):
        X = rng.normal(size=(5, 2))
        K = gram_matrix(KernelParams(1.0, 2.0, jitter=0.0), X)
        assert np.linalg.eigvalsh(K).min() >= -1e-10 * 2.0

    @given(st.integers(2, 20), st.floats(1e-6, 1e-1))
    def test_jitter_lifts_min_eigenvalue(self, n, j):
        X = np.linspace(-1, 1, n)[:, None]
        e0 = np.linalg.eigvalsh(gram_matrix(KernelParams(1.0, 1.0, jitter=0.0), X)).min()
        e1 = np.linalg.eigvalsh(gram_matrix(KernelParams(1.0, 1.0, jitter=j), X)).min()
        assert e1 >= e0 + j - 1e-9

    def test_non_finite_rejected(self):
        with pytest.raises(InputError):
            gram_matrix(UNIT, [[0.0], [np.nan]])

    def test_cross_gram_equals_gram_without_jitter(self, rng):
        X = rng.normal(size=(7, 3))
        assert np.array_equal(cross_gram(UNIT, X, X), gram_matrix(UNIT, X))

    def test_cross_gram_far_point(self):
        X = np.linspace(-1, 1, 5)[:, None]
        assert np.all(cross_gram(UNIT, X, [[11.0]]) < 1e-8)

    def test_cross_gram_loop_oracle(self, rng):
        X, Z = rng.normal(size=(3, 2)), rng.normal(size=(2, 2))
        kp = KernelParams(0.7, 1.9)
        np.testing.assert_allclose(cross_gram(kp, X, Z), loop_gram(kp, X, Z), rtol=1e-13)

    def test_cross_gram_dimension_mismatch(self):
        with pytest.raises(InputError):
            cross_gram(UNIT, np.zeros((2, 1)), np.zeros((2, 2)))

    def test_log_derivatives_match_finite_differences(self, rng):
        X = rng.normal(size=(6, 1))
        ls, s2, h = 0.8, 1.5, 1e-6
        K, dl, ds = gram_log_derivatives(KernelParams(ls, s2, 0.0), X)
        up = gram_matrix(KernelParams(ls * math.exp(h), s2, 0.0), X)
        dn = gram_matrix(KernelParams(ls * math.exp(-h), s2, 0.0), X)
        np.testing.assert_allclose(dl, (up - dn) / (2 * h), atol=1e-8)
        np.testing.assert_allclose(ds, K, atol=1e-12)


class TestMeans:
    def test_zero(self, rng):
        assert np.array_equal(mean_vector(ZeroMean(), rng.normal(size=(4, 2))), np.zeros(4))

    def test_constant(self):
        assert np.array_equal(mean_vector(ConstantMean(1.5), np.zeros((3, 1))), [1.5, 1.5, 1.5])

    def test_empirical(self):
        m = EmpiricalMean.fit([1.0, 2.0, 3.0])
        assert np.array_equal(mean_vector(m, np.zeros((3, 1))), [2.0, 2.0, 2.0])

    def test_polynomial_degree_one_collinear(self):
        X = np.linspace(0, 4, 9)[:, None]
        y = 2.0 - 0.5 * X[:, 0]
        m = PolynomialMean.fit(X, y, degree=1)
        np.testing.assert_allclose(mean_vector(m, X), y, atol=1e-12)

    def test_polynomial_matches_lstsq(self, rng):
        X = rng.uniform(-2, 2, size=(30, 1))
        y = rng.normal(size=30)
        m = PolynomialMean.fit(X, y, degree=3)
        V = np.vander(X[:, 0], 4, increasing=True)
        coef = np.linalg.lstsq(V, y, rcond=None)[0]
        np.testing.assert_allclose(mean_vector(m, X), V @ coef, atol=1e-10)

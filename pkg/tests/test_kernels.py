import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.distance import cdist

from _support import central_difference
from tapegp import adgraph as ad
from tapegp.kernels import (
    RBF,
    Constant,
    Linear,
    Matern32,
    Product,
    Sum,
    White,
    combine,
    kdiag,
    kmatrix,
    parse_kernel,
)
from tapegp.params import Frame, free_state, set_free_state


def brute_force(kernel, X1, X2=None):
    """Direct double-loop evaluation of the covariance formulas."""
    same = X2 is None
    X2 = X1 if same else X2
    if isinstance(kernel, Sum):
        return sum(brute_force(c, X1, None if same else X2) for c in kernel.children)
    if isinstance(kernel, Product):
        out = np.ones((X1.shape[0], X2.shape[0]))
        for c in kernel.children:
            out = out * brute_force(c, X1, None if same else X2)
        return out
    dims = kernel.active_dims if kernel.active_dims is not None else list(range(X1.shape[1]))
    A, B = X1[:, dims], X2[:, dims]
    var = kernel.variance.value[0, 0]
    out = np.zeros((A.shape[0], B.shape[0]))
    for i in range(A.shape[0]):
        for j in range(B.shape[0]):
            if isinstance(kernel, (RBF, Matern32)):
                ls = kernel.lengthscales.value.ravel()
                r = np.sqrt(np.sum(((A[i] - B[j]) / ls) ** 2))
                if isinstance(kernel, RBF):
                    out[i, j] = var * np.exp(-0.5 * r * r)
                else:
                    out[i, j] = var * (1 + np.sqrt(3) * r) * np.exp(-np.sqrt(3) * r)
            elif isinstance(kernel, Linear):
                out[i, j] = var * A[i] @ B[j]
            elif isinstance(kernel, Constant):
                out[i, j] = var
            elif isinstance(kernel, White):
                out[i, j] = var if (same and i == j) else 0.0
    return out


class TestKmatrix:
    def test_rbf_zero_distance(self):
        assert kmatrix(RBF(1.0, 1.0), np.array([[0.0]]))[0, 0] == 1.0

    def test_rbf_unit_distance(self):
        np.testing.assert_allclose(kmatrix(RBF(1.0, 1.0), [[0.0]], [[1.0]]), [[np.exp(-0.5)]], rtol=1e-15)
        assert kmatrix(RBF(1.0, 1.0), [[0.0]], [[1.0]])[0, 0] == pytest.approx(0.606531, abs=1e-6)

    def test_white_conventions(self):
        X = np.random.default_rng(0).standard_normal((4, 2))
        k = White(2.0)
        np.testing.assert_array_equal(kmatrix(k, X, X.copy()), np.zeros((4, 4)))
        np.testing.assert_allclose(kmatrix(k, X), 2.0 * np.eye(4), rtol=1e-14)

    @pytest.mark.parametrize(
        "kernel",
        [
            RBF(1.3, 0.7),
            RBF(0.8, [0.5, 1.5, 2.0]),
            Matern32(2.0, [1.0, 0.4, 3.0]),
            Matern32(1.0, 0.9),
            Linear(0.6),
            Constant(1.7),
            White(0.3),
            RBF(1.0, [0.5, 2.0], active_dims=[0, 2]),
        ],
    )
    def test_matches_brute_force(self, kernel):
        rng = np.random.default_rng(1)
        X = rng.standard_normal((6, 3))
        X2 = rng.standard_normal((4, 3))
        np.testing.assert_allclose(kmatrix(kernel, X), brute_force(kernel, X), rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(kmatrix(kernel, X, X2), brute_force(kernel, X, X2), rtol=1e-12, atol=1e-12)

    def test_matern_equal_points_no_nan(self):
        X = np.full((5, 3), 0.3) + 1e-9 * np.arange(15).reshape(5, 3)
        K = kmatrix(Matern32(1.0, 0.5), X)
        assert np.all(np.isfinite(K))
        np.testing.assert_allclose(np.diag(K), 1.0, rtol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            kmatrix(RBF(1.0, [1.0, 1.0]), np.ones((3, 3)))
        with pytest.raises(ValueError):
            kmatrix(RBF(1.0, 1.0), np.ones((3, 2)), np.ones((3, 3)))
        with pytest.raises(ValueError):
            kmatrix(RBF(1.0, 1.0, active_dims=[4]), np.ones((3, 2)))

    def test_ard_equal_lengthscales_matches_isotropic(self):
        X = np.random.default_rng(2).standard_normal((7, 3))
        iso = kmatrix(RBF(1.2, 0.8), X)
        ard = kmatrix(RBF(1.2, [0.8, 0.8, 0.8]), X)
        np.testing.assert_array_equal(ard, iso)

    @settings(max_examples=30, deadline=None)
    @given(
        n=st.integers(1, 64),
        d=st.integers(1, 4),
        seed=st.integers(0, 10**6),
        kind=st.sampled_from(["rbf", "matern32", "linear", "sum(rbf, white)", "product(rbf, linear)"]),
    )
    def test_symmetric_and_psd_with_jitter(self, n, d, seed, kind):
        X = np.random.default_rng(seed).uniform(-3, 3, (n, d))
        K = kmatrix(parse_kernel(kind, d), X)
        assert np.max(np.abs(K - K.T)) <= 1e-12
        np.linalg.cholesky(K + 1e-6 * np.eye(n))

    @settings(max_examples=30, deadline=None)
    @given(n=st.integers(1, 30), seed=st.integers(0, 10**6))
    def test_kdiag_matches_diagonal(self, n, seed):
        X = np.random.default_rng(seed).standard_normal((n, 2))
        for expr in ["rbf(ard=true)", "matern32", "linear", "constant", "white", "sum(rbf, product(linear, constant))"]:
            k = parse_kernel(expr, 2)
            np.testing.assert_allclose(kdiag(k, X), np.diag(kmatrix(k, X)), rtol=1e-12, atol=1e-12)


class TestKdiag:
    def test_rbf_constant(self):
        np.testing.assert_allclose(kdiag(RBF(2.5, 1.0), np.ones((3, 1))), [2.5, 2.5, 2.5], rtol=1e-14)

    def test_sum_with_white(self):
        k = Sum([RBF(1.0, 1.0), White(0.5)])
        np.testing.assert_allclose(kdiag(k, np.zeros((4, 1))), 1.5, rtol=1e-14)

    def test_linear(self):
        np.testing.assert_allclose(kdiag(Linear(1.0), np.array([[1.0, 2.0]])), [5.0], rtol=1e-14)


class TestCombine:
    def test_sum_entrywise(self):
        X = np.random.default_rng(3).standard_normal((5, 2))
        k1, k2 = RBF(1.0, 0.5), Matern32(2.0, 1.5)
        np.testing.assert_allclose(kmatrix(combine("sum", [k1, k2]), X), kmatrix(k1, X) + kmatrix(k2, X), rtol=1e-14)

    def test_product_with_constant_scales(self):
        X = np.random.default_rng(4).standard_normal((5, 2))
        k = RBF(1.0, 0.5)
        np.testing.assert_allclose(kmatrix(k * Constant(3.0), X), 3.0 * kmatrix(k, X), rtol=1e-13)

    def test_nested_matches_flat_recomposition(self):
        rng = np.random.default_rng(5)
        X, X2 = rng.standard_normal((6, 2)), rng.standard_normal((3, 2))
        k = parse_kernel("sum(product(rbf(lengthscales=0.7), linear(variance=0.5)), matern32(variance=2.0), white())", 2)
        a, b, c = k.children
        flat = kmatrix(a.children[0], X) * kmatrix(a.children[1], X) + kmatrix(b, X) + kmatrix(c, X)
        np.testing.assert_allclose(kmatrix(k, X), flat, rtol=1e-13)
        np.testing.assert_allclose(kmatrix(k, X, X2), brute_force(k, X, X2), rtol=1e-12, atol=1e-14)

    def test_operators(self):
        assert isinstance(RBF() + White(), Sum)
        assert isinstance(RBF() * Linear(), Product)

    def test_arity_and_dims(self):
        with pytest.raises(ValueError):
            combine("sum", [RBF()])
        with pytest.raises(ValueError):
            combine("sum", [RBF(1.0, [1.0, 1.0]), RBF(1.0, [1.0, 1.0, 1.0])])
        with pytest.raises(ValueError):
            combine("max", [RBF(), RBF()])


class TestGradients:
    @pytest.mark.parametrize("expr", ["rbf(ard=true)", "matern32(ard=true)", "sum(rbf, linear)", "product(matern32, constant)"])
    def test_sum_of_entries_matches_fd(self, expr):
        rng = np.random.default_rng(6)
        X = rng.standard_normal((8, 3))
        k = parse_kernel(expr, 3)
        params = k.parameters()
        set_free_state(params, rng.uniform(-0.5, 0.5, free_state(params).size))

        def f(x):
            set_free_state(params, x)
            return float(np.sum(kmatrix(k, X)))

        x0 = free_state(params)
        frame = Frame()
        g = frame.gradient(ad.reduce_sum(k.K(frame, X)), params)
        num = central_difference(f, x0)
        set_free_state(params, x0)
        np.testing.assert_allclose(g, num, rtol=1e-5, atol=1e-8)


class TestParser:
    def test_round_trip_expression(self):
        for expr in ["rbf(ard=false)", "sum(rbf(ard=true), white())", "product(linear(active_dims=[0]), constant())"]:
            k = parse_kernel(expr, 2)
            assert parse_kernel(k.to_expr(), 2).to_expr() == k.to_expr()

    def test_values_and_names(self):
        k = parse_kernel("sum(rbf(variance=2.0, lengthscales=[1.0, 3.0]), white(variance=0.1))", 2)
        names = [n for n, _ in k.named_parameters()]
        assert names == ["kernel.sum.0.rbf.variance", "kernel.sum.0.rbf.lengthscales", "kernel.sum.1.white.variance"]
        np.testing.assert_allclose(k.children[0].lengthscales.value, [[1.0, 3.0]], rtol=1e-14)

    def test_bare_name(self):
        assert isinstance(parse_kernel("matern32"), Matern32)

    def test_ard_width(self):
        assert parse_kernel("rbf(ard=true)", 4).lengthscales.shape == (1, 4)
        with pytest.raises(ValueError):
            parse_kernel("rbf(ard=true)")
        with pytest.raises(ValueError):
            parse_kernel("linear(ard=true)", 2)

    @pytest.mark.parametrize("bad", ["rbf(", "gauss()", "sum(rbf)", "rbf(1.0)", "rbf(foo=1)", "sum(rbf, white, x=1)", "3"])
    def test_errors(self, bad):
        with pytest.raises(ValueError):
            parse_kernel(bad, 2)

    def test_default_values(self):
        k = parse_kernel("rbf", 1)
        np.testing.assert_allclose(k.variance.value, [[1.0]], rtol=1e-14)
        np.testing.assert_allclose(k.lengthscales.value, [[1.0]], rtol=1e-14)

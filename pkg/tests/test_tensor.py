import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.integrate import quad

from helpers import gradcheck, numeric_grad, rel_error
from swinfuse.tensor import (ShapeError, Tensor, backward, filter2d, gelu, layer_norm, matmul,
                             no_grad, softmax_rows)


def t64(arr, grad=True):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=grad)


class TestMatmul:
    def test_identity(self):
        b = np.array([[1.0, 2.0], [3.0, 4.0]])
        out = matmul(Tensor(np.eye(2)), Tensor(b))
        np.testing.assert_array_equal(out.data, b)

    def test_hand_arithmetic(self):
        out = matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        assert out.data.tolist() == [[11.0]]

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_grad_of_sum_is_column_sums_of_b(self):
        rng = np.random.default_rng(0)
        a, b = t64(rng.standard_normal((3, 4))), t64(rng.standard_normal((4, 2)))
        matmul(a, b).sum().backward()
        expected = np.broadcast_to(b.data.sum(axis=1), (3, 4))
        numeric = numeric_grad(lambda: float((a.data @ b.data).sum()), a.data)
        assert rel_error(a.grad, numeric) < 1e-7
        np.testing.assert_allclose(a.grad, expected, rtol=1e-12)

    def test_batched_broadcast_grad(self):
        rng = np.random.default_rng(1)
        a, b = t64(rng.standard_normal((2, 3, 4))), t64(rng.standard_normal((4, 5)))
        errs = gradcheck(lambda: (matmul(a, b) ** 2).sum(), {"a": a, "b": b})
        assert max(errs.values()) < 1e-7

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(1, 5),
           st.integers(0, 2 ** 31))
    def test_associativity(self, r, k, m, c, seed):
        rng = np.random.default_rng(seed)
        a, b, d = (Tensor(rng.standard_normal(s)) for s in ((r, k), (k, m), (m, c)))
        left = matmul(matmul(a, b), d).data.astype(np.float64)
        right = matmul(a, matmul(b, d)).data.astype(np.float64)
        assert rel_error(left, right) < 1e-5


class TestSoftmax:
    def test_zero_row_is_uniform(self):
        out = softmax_rows(Tensor(np.zeros((2, 5))))
        np.testing.assert_allclose(out.data, 0.2, atol=1e-7)

    def test_ln2_closed_form(self):
        out = softmax_rows(t64([[math.log(2.0), 0.0]]))
        np.testing.assert_allclose(out.data, [[2 / 3, 1 / 3]], atol=1e-12)

    def test_large_inputs_do_not_overflow(self):
        out = softmax_rows(t64([[1000.0, 999.0]]))
        # shifted-input naive evaluation is the oracle
        shifted = np.exp(np.array([1.0, 0.0]))
        np.testing.assert_allclose(out.data[0], shifted / shifted.sum(), rtol=1e-12)
        np.testing.assert_allclose(out.data[0], [math.e / (math.e + 1), 1 / (math.e + 1)])

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 8)),
                  elements=st.floats(-1e4, 1e4)))
    def test_rows_sum_to_one(self, x):
        out = softmax_rows(Tensor(x))
        np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-6)

    def test_grad(self):
        rng = np.random.default_rng(2)
        x = t64(rng.standard_normal((3, 5)))
        w = rng.standard_normal((3, 5))
        errs = gradcheck(lambda: (softmax_rows(x) * w).sum(), {"x": x})
        assert errs["x"] < 1e-4


class TestLayerNorm:
    def test_constant_row_gives_zero(self):
        out = layer_norm(Tensor(np.full((2, 4), 3.0)), Tensor(np.ones(4)), Tensor(np.zeros(4)))
        np.testing.assert_array_equal(out.data, 0.0)

    def test_already_normalised(self):
        out = layer_norm(t64([[1.0, -1.0]]), t64(np.ones(2)), t64(np.zeros(2)), eps=1e-12)
        np.testing.assert_allclose(out.data, [[1.0, -1.0]], atol=1e-9)

    def test_moments(self):
        rng = np.random.default_rng(3)
        out = layer_norm(t64(rng.standard_normal((6, 8)) * 5 + 2), t64(np.ones(8)),
                         t64(np.zeros(8)))
        np.testing.assert_allclose(out.data.mean(axis=-1), 0.0, atol=1e-5)
        np.testing.assert_allclose(out.data.var(axis=-1), 1.0, atol=1e-5)

    def test_grad(self):
        rng = np.random.default_rng(4)
        x = t64(rng.standard_normal((4, 8)))
        g, b = t64(rng.standard_normal(8)), t64(rng.standard_normal(8))
        w = rng.standard_normal((4, 8))
        errs = gradcheck(lambda: (layer_norm(x, g, b) * w).sum(), {"x": x, "gamma": g, "beta": b})
        assert max(errs.values()) < 1e-4


class TestGelu:
    def test_zero(self):
        assert gelu(t64([0.0])).data[0] == 0.0

    def test_asymptote(self):
        x = np.array([6.0, 8.0, 20.0])
        np.testing.assert_allclose(gelu(t64(x)).data, x, atol=1e-6)

    def test_matches_quadrature_of_gaussian_cdf(self):
        cdf, _ = quad(lambda t: math.exp(-t * t / 2) / math.sqrt(2 * math.pi), -np.inf, 1.0,
                      epsabs=1e-14)
        assert abs(gelu(t64([1.0])).data[0] - cdf) < 1e-9

    def test_grad(self):
        x = t64(np.linspace(-4, 4, 17))
        assert gradcheck(lambda: gelu(x).sum(), {"x": x})["x"] < 1e-4


class TestBackward:
    def test_sum_gives_ones(self):
        w = t64(np.arange(5.0))
        w.sum().backward()
        np.testing.assert_array_equal(w.grad, np.ones(5))

    def test_square(self):
        w = t64([1.0, -2.0, 3.0])
        (w * w).sum().backward()
        np.testing.assert_array_equal(w.grad, 2 * w.data)

    def test_accumulates_until_zeroed(self):
        w = t64([1.0, 2.0])
        w.sum().backward()
        w.sum().backward()
        np.testing.assert_array_equal(w.grad, [2.0, 2.0])
        w.zero_grad()
        backward(w.sum())
        np.testing.assert_array_equal(w.grad, [1.0, 1.0])

    def test_non_scalar_root_rejected(self):
        w = t64([1.0, 2.0])
        with pytest.raises(ValueError, match="scalar"):
            (w * 2).backward()

    def test_shared_subexpression(self):
        w = t64([3.0])
        y = w * w
        (y + y * w).sum().backward()  # 2w^2... d/dw (w^2 + w^3) = 2w + 3w^2
        np.testing.assert_allclose(w.grad, [6.0 + 27.0])

    def test_no_grad_records_nothing(self):
        w = t64([1.0])
        with no_grad():
            y = w * 2
        assert not y.requires_grad


@pytest.mark.parametrize("name,build", [
    ("div", lambda a, b: (a / (b * b + 1.0)).sum()),
    ("sub_neg", lambda a, b: (-(a - b) * a).sum()),
    ("exp_log", lambda a, b: ((a * 0.1).exp() + (b * b + 1.0).log()).sum()),
    ("sqrt", lambda a, b: (a * a + 1.0).sqrt().sum()),
    ("tanh", lambda a, b: (a.tanh() * b).sum()),
    ("transpose_reshape", lambda a, b: (a.T.reshape(-1) * b.reshape(-1)).sum()),
    ("roll", lambda a, b: (a.roll((1, -2), (0, 1)) * b).sum()),
    ("take", lambda a, b: (a.take(np.array([0, 2, 2, 1])) ** 2).sum()),
    ("mean", lambda a, b: (a.mean(axis=1) ** 2).sum() + b.mean()),
    ("abs", lambda a, b: (a.abs() * b).sum()),
])
def test_elementwise_grads(name, build):
    rng = np.random.default_rng(5)
    a, b = t64(rng.standard_normal((3, 4)) + 0.1), t64(rng.standard_normal((3, 4)))
    errs = gradcheck(lambda: build(a, b), {"a": a, "b": b})
    assert max(errs.values()) < 1e-4, errs


def test_abs_subgradient_at_zero():
    x = t64([0.0, 1.0, -1.0])
    x.abs().sum().backward()
    np.testing.assert_array_equal(x.grad, [0.0, 1.0, -1.0])


def test_filter2d_matches_direct_correlation_and_grad():
    rng = np.random.default_rng(6)
    x = t64(rng.standard_normal((7, 9)))
    k = rng.standard_normal((3, 4))
    out = filter2d(x, k).data
    direct = np.array([[np.sum(x.data[i:i + 3, j:j + 4] * k) for j in range(6)]
                       for i in range(5)])
    np.testing.assert_allclose(out, direct, rtol=1e-12)
    w = rng.standard_normal(out.shape)
    assert gradcheck(lambda: (filter2d(x, k) * w).sum(), {"x": x})["x"] < 1e-6


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=1, max_size=4), st.integers(0, 2 ** 31))
def test_reshape_round_trip_bit_exact(dims, seed):
    x = np.random.default_rng(seed).standard_normal(dims).astype(np.float32)
    t = Tensor(x).reshape(-1).reshape(*dims)
    assert t.data.tobytes() == x.tobytes()


def test_default_dtype_is_single_precision():
    assert Tensor([1.0, 2.0]).dtype == np.float32
    assert Tensor(np.zeros(2)).dtype == np.float64
    assert (Tensor(np.zeros(2, np.float32)) * 2.0).dtype == np.float32

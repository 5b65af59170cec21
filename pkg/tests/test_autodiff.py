"""Finite-difference verification of the reverse-mode engine.

Every op's backward rule is checked against central differences on random
inputs; the tolerances here are what the rest of the test suite leans on.
"""

import numpy as np
import pytest
from conftest import fd_grad

from segalign import autodiff as ad
from segalign.autodiff import Tensor


def check_unary(op_fn, x: np.ndarray, atol: float = 1e-7):
    """Compare tape gradient of sum(op(x * w)) against finite differences."""
    weights = np.random.default_rng(7).standard_normal(op_fn(Tensor(x)).shape)

    def scalar(arr):
        t = Tensor(arr.copy(), requires_grad=True)
        out = op_fn(t)
        return float(ad.tsum(out * Tensor(weights)).data)

    t = Tensor(x.copy(), requires_grad=True)
    ad.tsum(op_fn(t) * Tensor(weights)).backward()
    np.testing.assert_allclose(t.grad, fd_grad(scalar, x.copy()), atol=atol)


class TestElementwise:
    def test_add_sub_mul_div_broadcast(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((3, 4))
        b = rng.standard_normal((4,)) + 3.0

        def scalar(parts):
            ta = Tensor(parts[0].copy(), requires_grad=True)
            tb = Tensor(parts[1].copy(), requires_grad=True)
            out = (ta + tb) * (ta - tb) / tb + ta * 2.0 - 0.5
            return ta, tb, ad.tsum(out * out)

        ta, tb, loss = scalar([a, b])
        loss.backward()
        ga = fd_grad(lambda x: float(scalar([x, b])[2].data), a.copy())
        gb = fd_grad(lambda x: float(scalar([a, x])[2].data), b.copy())
        np.testing.assert_allclose(ta.grad, ga, atol=1e-6)
        np.testing.assert_allclose(tb.grad, gb, atol=1e-6)

    def test_exp_log_sqrt_sigmoid_neg(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(0.5, 2.0, size=(2, 5))
        check_unary(ad.exp, x)
        check_unary(ad.log, x)
        check_unary(ad.sqrt, x)
        check_unary(ad.sigmoid, rng.standard_normal((2, 5)) * 3)
        check_unary(lambda t: -t, x)

    def test_sigmoid_extreme_inputs_finite(self):
        t = Tensor(np.array([-800.0, 0.0, 800.0]), requires_grad=True)
        out = ad.sigmoid(t)
        assert np.all(np.isfinite(out.data))
        np.testing.assert_allclose(out.data, [0.0, 0.5, 1.0], atol=1e-12)
        ad.tsum(out).backward()
        assert np.all(np.isfinite(t.grad))


class TestReductionsAndShape:
    def test_sum_axes(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((2, 3, 4))
        for axis, keepdims in [(None, False), (0, False), (1, True), ((0, 2), False)]:
            check_unary(lambda t: ad.tsum(t, axis=axis, keepdims=keepdims), x)

    def test_reshape_transpose(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((2, 3, 4))
        check_unary(lambda t: ad.reshape(t, (4, 6)), x)
        check_unary(lambda t: ad.transpose(t, (2, 0, 1)), x)

    def test_einsum_matmul_and_batched(self):
        rng = np.random.default_rng(4)
        a = rng.standard_normal((3, 4))
        b = rng.standard_normal((4, 2))

        def scalar_a(x):
            out = ad.einsum("ij,jk->ik", Tensor(x.copy(), requires_grad=True), Tensor(b))
            return float(ad.tsum(out * out).data)

        ta = Tensor(a.copy(), requires_grad=True)
        out = ad.einsum("ij,jk->ik", ta, Tensor(b))
        ad.tsum(out * out).backward()
        np.testing.assert_allclose(ta.grad, fd_grad(scalar_a, a.copy()), atol=1e-6)

        c = rng.standard_normal((2, 3, 5))
        d = rng.standard_normal((2, 5, 4))
        tc = Tensor(c.copy(), requires_grad=True)
        td = Tensor(d.copy(), requires_grad=True)
        loss = ad.tsum(ad.einsum("bij,bjk->bik", tc, td))
        loss.backward()

        def scalar_c(x):
            return float(
                ad.tsum(ad.einsum("bij,bjk->bik", Tensor(x.copy(), requires_grad=True), Tensor(d))).data
            )

        def scalar_d(x):
            return float(
                ad.tsum(ad.einsum("bij,bjk->bik", Tensor(c), Tensor(x.copy(), requires_grad=True))).data
            )

        np.testing.assert_allclose(tc.grad, fd_grad(scalar_c, c.copy()), atol=1e-6)
        np.testing.assert_allclose(td.grad, fd_grad(scalar_d, d.copy()), atol=1e-6)

    def test_einsum_rejects_unrecoverable_spec(self):
        # j is summed out of the first operand alone, so the backward pass
        # cannot rebuild it from the output and the other operand
        a = Tensor(np.ones((2, 3)), requires_grad=True)
        b = Tensor(np.ones(4))
        with pytest.raises(ValueError):
            ad.einsum("ij,k->ik", a, b)


class TestSoftmaxFamily:
    def test_softmax_matches_fd(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((3, 6)) * 2
        check_unary(lambda t: ad.softmax(t, axis=-1), x)
        check_unary(lambda t: ad.softmax(t, axis=0), x)

    def test_softmax_rows_sum_to_one_under_shift(self):
        x = np.array([[1000.0, 1000.5, 999.0], [-1000.0, -999.0, -1002.0]])
        s = ad.softmax(Tensor(x), axis=-1).data
        np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)
        assert np.all(np.isfinite(s))

    def test_logsumexp_matches_fd_and_is_stable(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((4, 5)) * 3
        check_unary(lambda t: ad.logsumexp(t, axis=-1), x)
        big = ad.logsumexp(Tensor(np.array([1e4, 1e4 - 1.0])), axis=0)
        assert np.isfinite(big.data)

    def test_logsumexp_single_element_is_identity(self):
        x = np.array([[3.25]])
        out = ad.logsumexp(Tensor(x), axis=-1)
        np.testing.assert_allclose(out.data, [3.25], rtol=0, atol=0)


class TestGatherOps:
    def test_take_along_backward(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((3, 5))
        idx = rng.integers(0, 5, size=(3, 2))
        check_unary(lambda t: ad.take_along(t, idx, axis=1), x)

    def test_take_along_duplicate_indices_accumulate(self):
        x = Tensor(np.arange(4.0).reshape(1, 4), requires_grad=True)
        idx = np.array([[2, 2, 2]])
        ad.tsum(ad.take_along(x, idx, axis=1)).backward()
        np.testing.assert_allclose(x.grad, [[0.0, 0.0, 3.0, 0.0]])

    def test_take_diag2(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((4, 4, 3))
        out = ad.take_diag2(Tensor(x))
        np.testing.assert_allclose(out.data, x[np.arange(4), np.arange(4)])
        check_unary(ad.take_diag2, x)


class TestPatchExtraction:
    def test_values_match_manual_zero_padding(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((1, 3, 4, 2))
        out = ad.extract_patches3x3(Tensor(x)).data
        padded = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
        for i in range(3):
            for j in range(4):
                np.testing.assert_allclose(out[0, i, j], padded[0, i : i + 3, j : j + 3])

    def test_backward_matches_fd(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((2, 3, 3, 2))
        check_unary(ad.extract_patches3x3, x)


class TestTapeMechanics:
    def test_backward_requires_scalar(self):
        t = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError):
            (t * 2.0).backward()

    def test_constants_collect_no_grad(self):
        c = Tensor(np.ones(3))
        t = Tensor(np.ones(3), requires_grad=True)
        ad.tsum(c * t).backward()
        assert c.grad is None
        np.testing.assert_allclose(t.grad, np.ones(3))

    def test_grad_accumulates_across_reuse(self):
        t = Tensor(np.array([2.0]), requires_grad=True)
        ad.tsum(t * t + t).backward()
        np.testing.assert_allclose(t.grad, [5.0])

    def test_diamond_graph(self):
        t = Tensor(np.array([1.5]), requires_grad=True)
        a = t * 2.0
        b = t + 1.0
        ad.tsum(a * b).backward()
        # d/dt [2t(t+1)] = 4t + 2
        np.testing.assert_allclose(t.grad, [8.0])

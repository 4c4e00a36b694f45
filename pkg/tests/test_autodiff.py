"""Autodiff core: every op against central finite differences and a few
closed-form gradients."""

import numpy as np
import pytest

from octapws.learn import autodiff as ad
from octapws.learn.autodiff import Tensor, stop_gradient


def numeric_grad(f, arrays, h=1e-6):
    """Central differences of a scalar function of plain arrays."""
    grads = []
    for k, a in enumerate(arrays):
        g = np.zeros_like(a, dtype=float)
        flat = a.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            fp = f(*arrays)
            flat[i] = keep - h
            fm = f(*arrays)
            flat[i] = keep
            gf[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def check_op(build, arrays, rtol=1e-6, atol=1e-7):
    """build(tensors) -> scalar Tensor; compares backward() with FD."""
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = build(*tensors)
    out.backward()

    def scalar(*arrs):
        return build(*[Tensor(a) for a in arrs]).item()

    numeric = numeric_grad(scalar, [a.copy() for a in arrays])
    for t, n in zip(tensors, numeric):
        assert t.grad is not None
        np.testing.assert_allclose(t.grad, n, rtol=rtol, atol=atol)


class TestArithmetic:
    def test_add_mul_chain_closed_form(self):
        x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
        y = ad.tsum(x * x + x)
        y.backward()
        np.testing.assert_allclose(x.grad, 2 * x.data + 1)

    def test_broadcast_add(self):
        rng = np.random.default_rng(0)
        check_op(lambda a, b: ad.tsum((a + b) ** 2.0), [rng.random((3, 1)), rng.random((3, 4))])

    def test_broadcast_mul_scalar_operand(self):
        rng = np.random.default_rng(1)
        check_op(lambda a, b: ad.tsum(a * b), [rng.random((2, 3)), rng.random(())])

    def test_sub_div(self):
        rng = np.random.default_rng(2)
        check_op(
            lambda a, b: ad.tsum(a / (b + 2.0) - b),
            [rng.random((4,)), rng.random((4,))],
        )

    def test_power(self):
        rng = np.random.default_rng(3)
        check_op(lambda a: ad.tsum(a**3.0), [rng.random((5,)) + 0.5])

    def test_matmul(self):
        rng = np.random.default_rng(4)
        check_op(lambda a, b: ad.tsum((a @ b) ** 2.0), [rng.random((3, 4)), rng.random((4, 2))])

    def test_matmul_rejects_vectors(self):
        with pytest.raises(ValueError, match="2-d"):
            ad.matmul(Tensor(np.ones(3)), Tensor(np.ones((3, 2))))

    def test_elementwise_nonlinearities(self):
        rng = np.random.default_rng(5)
        x = rng.random((6,)) * 2 - 1
        check_op(lambda a: ad.tsum(ad.exp(a)), [x])
        check_op(lambda a: ad.tsum(ad.log(a + 2.0)), [x])
        check_op(lambda a: ad.tsum(ad.sqrt(a + 1.5)), [x])
        check_op(lambda a: ad.tsum(ad.sigmoid(a)), [x])
        check_op(lambda a: ad.tsum(ad.softplus(a)), [x])
        # relu away from the kink
        check_op(lambda a: ad.tsum(ad.relu(a)), [np.array([-0.9, -0.2, 0.3, 1.4])])

    def test_sigmoid_softplus_extremes_finite(self):
        x = Tensor(np.array([-800.0, 800.0]))
        s = ad.sigmoid(x).data
        assert np.all(np.isfinite(s))
        np.testing.assert_allclose(s, [0.0, 1.0], atol=1e-12)
        sp = ad.softplus(x).data
        assert np.all(np.isfinite(sp))
        assert sp[0] == 0.0 and sp[1] == pytest.approx(800.0)


class TestShapesAndReductions:
    def test_sum_axis_keepdims(self):
        rng = np.random.default_rng(6)
        check_op(lambda a: ad.tsum(ad.tsum(a, axis=0, keepdims=True) ** 2.0), [rng.random((3, 4))])
        check_op(lambda a: ad.tsum(ad.tsum(a, axis=1) ** 2.0), [rng.random((3, 4))])

    def test_mean_axis_tuple(self):
        rng = np.random.default_rng(7)
        check_op(lambda a: ad.tsum(ad.tmean(a, axis=(1, 2)) ** 2.0), [rng.random((2, 3, 4))])
        x = Tensor(np.arange(12.0).reshape(3, 4))
        np.testing.assert_allclose(ad.tmean(x).data, 5.5)

    def test_reshape_transpose(self):
        rng = np.random.default_rng(8)
        check_op(lambda a: ad.tsum(a.reshape((6, 2)) ** 2.0), [rng.random((3, 4))])
        check_op(lambda a: ad.tsum(a.transpose((2, 0, 1)) ** 3.0), [rng.random((2, 3, 4))])
        check_op(lambda a: ad.tsum(a.T @ a), [rng.random((3, 3))])

    def test_getitem_scatter(self):
        x = Tensor(np.arange(10.0), requires_grad=True)
        y = ad.tsum(x[2:5] * 3.0)
        y.backward()
        expect = np.zeros(10)
        expect[2:5] = 3.0
        np.testing.assert_array_equal(x.grad, expect)

    def test_getitem_repeated_index_accumulates(self):
        x = Tensor(np.arange(4.0), requires_grad=True)
        idx = np.array([1, 1, 3])
        ad.tsum(x[idx]).backward()
        np.testing.assert_array_equal(x.grad, [0.0, 2.0, 0.0, 1.0])

    def test_concatenate_stack(self):
        rng = np.random.default_rng(9)
        check_op(
            lambda a, b: ad.tsum(ad.concatenate([a, b], axis=1) ** 2.0),
            [rng.random((2, 3)), rng.random((2, 4))],
        )
        check_op(
            lambda a, b: ad.tsum(ad.stack([a, b], axis=0) ** 2.0),
            [rng.random((2, 3)), rng.random((2, 3))],
        )


class TestSoftmax:
    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(10)
        s = ad.softmax(Tensor(rng.normal(0, 5, (4, 7))), axis=1)
        np.testing.assert_allclose(s.data.sum(axis=1), 1.0, atol=1e-12)

    def test_large_logits_stable(self):
        s = ad.softmax(Tensor(np.array([[1000.0, 0.0, -1000.0]])), axis=1)
        assert np.all(np.isfinite(s.data))
        np.testing.assert_allclose(s.data, [[1.0, 0.0, 0.0]], atol=1e-12)

    def test_gradient(self):
        rng = np.random.default_rng(11)
        w = rng.random((3, 4))
        check_op(lambda a: ad.tsum(ad.softmax(a, axis=1) * w), [rng.normal(0, 1, (3, 4))])


def conv_reference(x, w, b, stride, padding):
    """Loop transliteration of strided cross-correlation."""
    n, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, f, ho, wo))
    for ni in range(n):
        for fi in range(f):
            for oy in range(ho):
                for ox in range(wo):
                    patch = xp[ni, :, oy * stride : oy * stride + kh, ox * stride : ox * stride + kw]
                    out[ni, fi, oy, ox] = (patch * w[fi]).sum() + b[fi]
    return out


class TestConv2d:
    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1), (3, 0)])
    def test_forward_matches_loop_reference(self, stride, padding):
        rng = np.random.default_rng(12)
        x = rng.random((2, 3, 7, 8))
        w = rng.random((4, 3, 3, 3))
        b = rng.random(4)
        out = ad.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=padding)
        np.testing.assert_allclose(out.data, conv_reference(x, w, b, stride, padding), atol=1e-12)

    def test_gradients(self):
        rng = np.random.default_rng(13)
        check_op(
            lambda x, w, b: ad.tsum(ad.conv2d(x, w, b, stride=2, padding=1) ** 2.0),
            [rng.random((1, 2, 5, 6)), rng.random((3, 2, 3, 3)), rng.random(3)],
            rtol=1e-5,
        )

    def test_rejects_channel_mismatch(self):
        with pytest.raises(ValueError, match="channels"):
            ad.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((3, 5, 3, 3))))

    def test_rejects_oversized_kernel(self):
        with pytest.raises(ValueError, match="does not fit"):
            ad.conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 5, 5))))


class TestGraphMechanics:
    def test_stop_gradient_cuts_flow(self):
        x = Tensor(np.array([2.0, 3.0]), requires_grad=True)
        y = ad.tsum(stop_gradient(x * 2.0) * x)
        y.backward()
        # only the direct factor contributes: d/dx (c * x) = c
        np.testing.assert_allclose(x.grad, 2.0 * x.data)

    def test_backward_needs_scalar_without_seed(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            (x * 2.0).backward()

    def test_backward_with_seed(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        (x * 3.0).backward(np.full((2, 2), 2.0))
        np.testing.assert_allclose(x.grad, 6.0)

    def test_grads_accumulate_until_cleared(self):
        x = Tensor(np.array([1.0]), requires_grad=True)
        ad.tsum(x * 2.0).backward()
        ad.tsum(x * 2.0).backward()
        np.testing.assert_allclose(x.grad, [4.0])
        x.zero_grad()
        assert x.grad is None

    def test_shared_subexpression_diamond(self):
        x = Tensor(np.array([3.0]), requires_grad=True)
        a = x * 2.0
        y = ad.tsum(a * a + a)  # d/dx = 8x + 2
        y.backward()
        np.testing.assert_allclose(x.grad, [8 * 3.0 + 2.0])

    def test_deep_chain_iterative_traversal(self):
        x = Tensor(np.array([1.0]), requires_grad=True)
        y = x
        for _ in range(5000):
            y = y + 1.0
        ad.tsum(y).backward()
        np.testing.assert_allclose(x.grad, [1.0])

    def test_constant_graphs_record_nothing(self):
        out = Tensor(np.ones(3)) * Tensor(np.ones(3))
        assert out._parents == () and not out.requires_grad

    def test_detach(self):
        x = Tensor(np.ones(3), requires_grad=True)
        d = (x * 2.0).detach()
        assert not d.requires_grad and d._parents == ()

    def test_default_dtype_switch(self):
        ad.set_default_dtype(np.float32)
        try:
            assert Tensor(np.zeros(2)).data.dtype == np.float32
        finally:
            ad.set_default_dtype(np.float64)
        assert Tensor(np.zeros(2)).data.dtype == np.float64
        with pytest.raises(ValueError, match="float32 or float64"):
            ad.set_default_dtype(np.int32)

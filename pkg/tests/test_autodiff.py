import numpy as np
import pytest

from imupretrain.errors import NumericsError
from imupretrain.nets.autodiff import Tensor, affine2, backward, layer_norm, linear


def param(data):
    return Tensor(np.asarray(data, dtype=float), requires_grad=True)


def numeric_grad(f, x, h=1e-6):
    g = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g


def check_op(build, *params, tol=1e-6):
    """Compare backward() against central differences for every parameter."""
    for p in params:
        p.grad = None
    loss = build()
    backward(loss)
    for p in params:
        fd = numeric_grad(lambda: build().item(), p)
        np.testing.assert_allclose(p.grad, fd, atol=tol, rtol=1e-4)


class TestElementwiseOps:
    def test_add_mul(self):
        rng = np.random.default_rng(0)
        a, b = param(rng.normal(size=(3, 4))), param(rng.normal(size=(3, 4)))
        check_op(lambda: ((a + b) * a).sum(), a, b)

    def test_broadcast_bias(self):
        rng = np.random.default_rng(1)
        a, b = param(rng.normal(size=(3, 4))), param(rng.normal(size=(4,)))
        check_op(lambda: ((a + b) * (a * b)).sum(), a, b)

    def test_scalar_paths(self):
        a = param(np.array([1.0, -2.0, 3.0]))
        check_op(lambda: ((2.0 * a + 1.0 - a / 4.0) * 0.5).sum(), a)
        check_op(lambda: (1.0 - a).square().sum(), a)

    def test_unary_chain(self):
        rng = np.random.default_rng(2)
        a = param(rng.normal(size=(5,)))
        check_op(lambda: (a.tanh() + a.sigmoid() + a.silu()).square().sum(), a)
        b = param(np.abs(rng.normal(size=(5,))) + 0.5)
        check_op(lambda: (b.log() + b.sqrt() + b.reciprocal()).sum(), b)
        check_op(lambda: b.exp().sum(), b)

    def test_same_tensor_twice(self):
        a = param(np.array([1.0, 2.0]))
        check_op(lambda: (a + a).sum(), a)
        check_op(lambda: (a * a).sum(), a)

    def test_clip_min(self):
        a = param(np.array([-1.0, 0.5, 2.0]))
        loss = a.clip_min(0.0).sum()
        backward(loss)
        np.testing.assert_array_equal(a.grad, [0.0, 1.0, 1.0])


class TestMatmulShapes:
    def test_2d(self):
        rng = np.random.default_rng(3)
        a, b = param(rng.normal(size=(3, 4))), param(rng.normal(size=(4, 2)))
        check_op(lambda: (a @ b).square().sum(), a, b)

    def test_batched_4d(self):
        rng = np.random.default_rng(4)
        a = param(rng.normal(size=(2, 3, 4, 5)))
        b = param(rng.normal(size=(2, 3, 5, 4)))
        check_op(lambda: (a @ b).sum(), a, b)

    def test_matrix_vector(self):
        rng = np.random.default_rng(5)
        a, v = param(rng.normal(size=(3, 4))), param(rng.normal(size=(4,)))
        check_op(lambda: (a @ v).sum(), a, v)

    def test_linear_fused(self):
        rng = np.random.default_rng(6)
        x = param(rng.normal(size=(2, 5, 3)))
        w = param(rng.normal(size=(3, 4)))
        b = param(rng.normal(size=(4,)))
        check_op(lambda: linear(x, w, b).square().sum(), x, w, b)

    def test_affine2_fused(self):
        rng = np.random.default_rng(7)
        x = param(rng.normal(size=(4, 3)))
        h = param(rng.normal(size=(4, 3)))
        w = param(rng.normal(size=(3, 3)))
        u = param(rng.normal(size=(3, 3)))
        b = param(rng.normal(size=(3,)))
        check_op(lambda: affine2(x, w, h, u, b).tanh().sum(), x, w, h, u, b)


class TestReductionsAndShape:
    def test_sum_axes(self):
        rng = np.random.default_rng(8)
        a = param(rng.normal(size=(3, 4, 5)))
        check_op(lambda: a.sum(axis=1).square().sum(), a)
        check_op(lambda: a.mean(axis=-1, keepdims=True).square().sum(), a)

    def test_reshape_transpose(self):
        rng = np.random.default_rng(9)
        a = param(rng.normal(size=(2, 3, 4)))
        check_op(lambda: a.reshape(6, 4).transpose((1, 0)).square().sum(), a)

    def test_take_ops(self):
        rng = np.random.default_rng(10)
        a = param(rng.normal(size=(4, 5, 3)))
        check_op(lambda: a.take_time(2).square().sum(), a)
        check_op(lambda: a.take_rows(1, 3).square().sum(), a)

    def test_softmax(self):
        rng = np.random.default_rng(11)
        a = param(rng.normal(size=(3, 6)))
        w = Tensor(rng.normal(size=(3, 6)))
        check_op(lambda: (a.softmax() * w).sum(), a)
        probs = a.softmax().data
        np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-12)

    def test_gather_labels(self):
        rng = np.random.default_rng(12)
        a = param(rng.normal(size=(4, 3)))
        labels = np.array([0, 2, 1, 1])
        check_op(lambda: a.gather_labels(labels).square().sum(), a)

    def test_layer_norm(self):
        rng = np.random.default_rng(13)
        x = param(rng.normal(size=(2, 4, 6)))
        g = param(np.abs(rng.normal(size=(6,))) + 0.5)
        b = param(rng.normal(size=(6,)))
        check_op(lambda: layer_norm(x, g, b).square().sum(), x, g, b)


class TestBackwardMechanics:
    def test_scalar_loss_required(self):
        a = param(np.ones((2, 2)))
        with pytest.raises(ValueError):
            backward(a + 1.0)

    def test_gradient_accumulates_over_shared_subgraph(self):
        a = param(np.array([2.0]))
        b = a * 3.0
        loss = (b + b).sum()
        backward(loss)
        np.testing.assert_allclose(a.grad, [6.0])

    def test_shared_buffer_not_corrupted(self):
        # x feeds two residual-style adds; gradients must not alias
        x = param(np.array([1.0, 2.0]))
        y = param(np.array([3.0, 4.0]))
        s1 = x + y
        s2 = x + s1
        loss = (s2 * s2).sum() + (s1 * s1).sum()
        backward(loss)
        fd_x = numeric_grad(lambda: (((x.data + y.data) + x.data) ** 2).sum()
                            + ((x.data + y.data) ** 2).sum(), x)
        np.testing.assert_allclose(x.grad, fd_x, atol=1e-5)

    def test_nan_diagnostic_names_op(self):
        a = param(np.array([1.0, np.nan]))
        loss = a.exp().sum()
        with pytest.raises(NumericsError, match="exp|leaf"):
            backward(loss)

    def test_float32_graph_stays_float32(self):
        a = Tensor(np.ones((3, 3), dtype=np.float32), requires_grad=True)
        out = ((a * 2.0 + 1.0).silu() @ a).softmax()
        assert out.data.dtype == np.float32
        backward(out.sum() * (1.0 / 3.0))
        assert a.grad.dtype == np.float32

    def test_requires_grad_propagation(self):
        a = Tensor(np.ones(3))
        b = param(np.ones(3))
        assert not (a + 1.0).requires_grad
        assert (a + b).requires_grad

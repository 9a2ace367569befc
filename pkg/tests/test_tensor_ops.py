import numpy as np
import pytest

from fpgrid.tensor import ops


def naive_conv(x, w, b, stride):
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho, wo = (h + 2 * pad - k) // stride + 1, (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for a in range(ho):
        for bb in range(wo):
            patch = xp[:, :, a * stride:a * stride + k, bb * stride:bb * stride + k]
            out[:, :, a, bb] = np.einsum("ncij,ocij->no", patch, w)
    if b is not None:
        out += b[None, :, None, None]
    return out


def numeric_vjp(f, x, g, eps=1e-6):
    out = np.zeros_like(x)
    flat = x.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = np.sum(f(x) * g)
        flat[i] = orig - eps
        dn = np.sum(f(x) * g)
        flat[i] = orig
        out.reshape(-1)[i] = (up - dn) / (2 * eps)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(7)


class TestConv2d:
    def test_identity_kernel(self, rng):
        x = rng.normal(size=(2, 4, 6, 6))
        w = np.eye(4).reshape(4, 4, 1, 1)
        out, _ = ops.conv2d(x, w, np.zeros(4))
        assert np.array_equal(out, x)

    @pytest.mark.parametrize("k,stride", [(1, 1), (3, 1), (3, 2), (1, 2), (5, 2)])
    def test_matches_naive(self, rng, k, stride):
        x = rng.normal(size=(2, 3, 8, 8))
        w = rng.normal(size=(5, 3, k, k))
        b = rng.normal(size=5)
        out, _ = ops.conv2d(x, w, b, stride)
        assert out.shape == (2, 5, 8 // stride, 8 // stride)
        np.testing.assert_allclose(out, naive_conv(x, w, b, stride), rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize("k,stride", [(1, 1), (3, 1), (3, 2)])
    def test_vjp(self, rng, k, stride):
        x = rng.normal(size=(1, 2, 4, 4))
        w = rng.normal(size=(3, 2, k, k))
        b = rng.normal(size=3)
        out, vjp = ops.conv2d(x, w, b, stride)
        g = rng.normal(size=out.shape)
        dx, dw, db = vjp(g)
        np.testing.assert_allclose(dx, numeric_vjp(lambda t: ops.conv2d(t, w, b, stride)[0], x, g), atol=1e-7)
        np.testing.assert_allclose(dw, numeric_vjp(lambda t: ops.conv2d(x, t, b, stride)[0], w, g), atol=1e-7)
        np.testing.assert_allclose(db, numeric_vjp(lambda t: ops.conv2d(x, w, t, stride)[0], b, g), atol=1e-7)

    def test_bias_gradient_is_area(self, rng):
        x = rng.normal(size=(1, 8, 16, 16))
        out, vjp = ops.conv2d(x, rng.normal(size=(8, 8, 1, 1)), np.zeros(8))
        _, _, db = vjp(np.ones_like(out))
        assert np.array_equal(db, np.full(8, 16 * 16.0))

    def test_bad_weight(self, rng):
        with pytest.raises(ops.TensorShapeError):
            ops.conv2d(rng.normal(size=(1, 3, 4, 4)), rng.normal(size=(2, 4, 1, 1)))


class TestElementwise:
    def test_nearest_up2_constant(self):
        out, _ = ops.nearest_up2(np.full((1, 2, 3, 5), 1.5))
        assert out.shape == (1, 2, 6, 10)
        assert np.all(out == 1.5)

    def test_bn_near_identity(self, rng):
        x = rng.normal(size=(2, 3, 4, 4))
        out, _ = ops.bn_infer(x, np.ones(3), np.zeros(3), np.zeros(3), np.ones(3), 1e-5)
        np.testing.assert_allclose(out, x / np.sqrt(1 + 1e-5), rtol=1e-15)
        assert np.max(np.abs(out - x)) < 1e-5 * np.max(np.abs(x))

    def test_pools(self):
        x = np.arange(16, dtype=float).reshape(1, 1, 4, 4)
        mx, _ = ops.maxpool2(x)
        av, _ = ops.avgpool2(x)
        assert mx[0, 0].tolist() == [[5, 7], [13, 15]]
        assert av[0, 0].tolist() == [[2.5, 4.5], [10.5, 12.5]]

    def test_pool_odd(self):
        with pytest.raises(ops.TensorShapeError):
            ops.avgpool2(np.zeros((1, 1, 3, 4)))

    @pytest.mark.parametrize("name", ["relu", "nearest_up2", "avgpool2", "maxpool2", "identity"])
    def test_vjp(self, rng, name):
        f = getattr(ops, name)
        x = rng.normal(size=(1, 2, 4, 4))
        out, vjp = f(x)
        g = rng.normal(size=out.shape)
        (dx,) = vjp(g)
        np.testing.assert_allclose(dx, numeric_vjp(lambda t: f(t)[0], x, g), atol=1e-7)

    def test_bn_vjp(self, rng):
        x = rng.normal(size=(1, 3, 2, 2))
        gamma, beta = rng.normal(size=3), rng.normal(size=3)
        mean, var = rng.normal(size=3), rng.uniform(0.5, 2, size=3)
        out, vjp = ops.bn_infer(x, gamma, beta, mean, var)
        g = rng.normal(size=out.shape)
        dx, dgamma, dbeta = vjp(g)
        f = lambda t: ops.bn_infer(t, gamma, beta, mean, var)[0]
        np.testing.assert_allclose(dx, numeric_vjp(f, x, g), atol=1e-7)
        xhat = (x - mean[None, :, None, None]) / np.sqrt(var + 1e-5)[None, :, None, None]
        np.testing.assert_allclose(dgamma, (g * xhat).sum(axis=(0, 2, 3)))
        np.testing.assert_allclose(dbeta, g.sum(axis=(0, 2, 3)))

    def test_sum_order_and_shapes(self, rng):
        a, b, c = (rng.normal(size=(1, 2, 2, 2)) for _ in range(3))
        assert np.array_equal(ops.tensor_sum([a, b, c]), (a + b) + c)
        with pytest.raises(ops.TensorShapeError):
            ops.tensor_sum([a, np.zeros((1, 2, 4, 4))])
        with pytest.raises(ops.TensorShapeError):
            ops.tensor_sum([])

    def test_as_tensor(self):
        assert ops.as_tensor([[[[1]]]]).dtype == np.float64
        with pytest.raises(ops.TensorShapeError):
            ops.as_tensor(np.zeros((2, 2)))
        with pytest.raises(ops.TensorShapeError):
            ops.as_tensor(np.zeros((1, 0, 2, 2)))

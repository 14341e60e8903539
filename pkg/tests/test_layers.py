import numpy as np
import pytest

from tilecnn.nn import layers
from tilecnn.nn.gradcheck import numerical_gradient, relative_error

TOL = 1e-3
SEEDS = range(5)


def naive_conv(x, w, b):
    n, c, h, wd = x.shape
    f = w.shape[0]
    out = np.zeros((n, f, h, wd))
    for i in range(n):
        for k in range(f):
            for y in range(h):
                for xx in range(wd):
                    acc = b[k]
                    for ch in range(c):
                        for dy in range(3):
                            for dx in range(3):
                                yy, xs = y + dy - 1, xx + dx - 1
                                if 0 <= yy < h and 0 <= xs < wd:
                                    acc += x[i, ch, yy, xs] * w[k, ch, dy, dx]
                    out[i, k, y, xx] = acc
    return out


# -- conv ---------------------------------------------------------------------


def test_conv_all_ones():
    out, _ = layers.conv2d_forward(np.ones((1, 1, 3, 3)), np.ones((1, 1, 3, 3)), np.zeros(1))
    np.testing.assert_array_equal(out[0, 0], [[4, 6, 4], [6, 9, 6], [4, 6, 4]])


def test_conv_identity_kernel(rng):
    x = rng.standard_normal((2, 1, 5, 6))
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1.0
    out, _ = layers.conv2d_forward(x, w, np.zeros(1))
    np.testing.assert_array_equal(out, x)


def test_conv_matches_naive(rng):
    x = rng.standard_normal((2, 3, 5, 4))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    out, _ = layers.conv2d_forward(x, w, b)
    np.testing.assert_allclose(out, naive_conv(x, w, b), rtol=1e-12, atol=1e-12)


def test_conv_shape_mismatch(rng):
    with pytest.raises(ValueError):
        layers.conv2d_forward(rng.random((1, 2, 4, 4)), rng.random((3, 3, 3, 3)), np.zeros(3))


@pytest.mark.parametrize("seed", SEEDS)
def test_conv_gradients(seed):
    r = np.random.default_rng(seed)
    x = r.standard_normal((2, 2, 4, 4))
    w = r.standard_normal((3, 2, 3, 3))
    b = r.standard_normal(3)
    up = r.standard_normal((2, 3, 4, 4))

    def loss():
        return float((layers.conv2d_forward(x, w, b)[0] * up).sum())

    _, cache = layers.conv2d_forward(x, w, b)
    dx, dw, db = layers.conv2d_backward(up, cache)
    assert relative_error(dx, numerical_gradient(loss, x)) < TOL
    assert relative_error(dw, numerical_gradient(loss, w)) < TOL
    assert relative_error(db, numerical_gradient(loss, b)) < TOL


# -- batchnorm ----------------------------------------------------------------


def _bn_stats(c):
    return np.zeros(c), np.ones(c)


def test_batchnorm_constant_input():
    x = np.broadcast_to(np.array([3.0, -1.0])[None, :, None, None], (4, 2, 3, 3)).copy()
    out, _ = layers.batchnorm_forward(x, np.ones(2), np.zeros(2), *_bn_stats(2), training=True)
    np.testing.assert_array_equal(out, 0.0)


def test_batchnorm_normalizes(rng):
    x = rng.standard_normal((8, 3, 4, 4)) * 5 + 2
    out, _ = layers.batchnorm_forward(x, np.ones(3), np.zeros(3), *_bn_stats(3), training=True)
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-4)
    var = x.var(axis=(0, 2, 3))
    np.testing.assert_allclose(out.var(axis=(0, 2, 3)), var / (var + layers.BN_EPS), atol=1e-4)
    np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1.0, atol=1e-4)


def test_batchnorm_running_stats(rng):
    x = rng.standard_normal((4, 2, 3, 3)) + 1.0
    mean, var = np.array([1.0, 2.0]), np.array([3.0, 4.0])
    batch_mean, batch_var = x.mean(axis=(0, 2, 3)), x.var(axis=(0, 2, 3))
    layers.batchnorm_forward(x, np.ones(2), np.zeros(2), mean, var, training=True)
    np.testing.assert_allclose(mean, 0.9 * np.array([1.0, 2.0]) + 0.1 * batch_mean)
    np.testing.assert_allclose(var, 0.9 * np.array([3.0, 4.0]) + 0.1 * batch_var)


def test_batchnorm_infer_uses_running_stats(rng):
    x = rng.standard_normal((2, 2, 3, 3))
    mean, var = np.array([0.5, -0.5]), np.array([4.0, 0.25])
    gamma, beta = np.array([2.0, 1.0]), np.array([0.0, 1.0])
    out, _ = layers.batchnorm_forward(x, gamma, beta, mean.copy(), var.copy(), training=False)
    expected = gamma[None, :, None, None] * (x - mean[None, :, None, None]) / np.sqrt(
        var[None, :, None, None] + 1e-5) + beta[None, :, None, None]
    np.testing.assert_allclose(out, expected)


def test_batchnorm_single_element_rejected():
    with pytest.raises(ValueError):
        layers.batchnorm_forward(np.ones((1, 2, 1, 1)), np.ones(2), np.zeros(2), *_bn_stats(2), training=True)


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("training", [True, False])
def test_batchnorm_gradients(seed, training):
    r = np.random.default_rng(seed)
    x = r.standard_normal((3, 2, 3, 3)) * 2 + 0.5
    gamma = r.standard_normal(2)
    beta = r.standard_normal(2)
    up = r.standard_normal(x.shape)
    mean, var = r.standard_normal(2), r.random(2) + 0.5

    def run():
        return layers.batchnorm_forward(x, gamma, beta, mean.copy(), var.copy(), training)

    def loss():
        return float((run()[0] * up).sum())

    dx, dgamma, dbeta = layers.batchnorm_backward(up, run()[1])
    assert relative_error(dx, numerical_gradient(loss, x)) < TOL
    assert relative_error(dgamma, numerical_gradient(loss, gamma)) < TOL
    assert relative_error(dbeta, numerical_gradient(loss, beta)) < TOL


# -- relu ---------------------------------------------------------------------


def test_relu_values():
    out, cache = layers.relu_forward(np.array([-1.0, 0.0, 2.0]))
    assert out.tolist() == [0.0, 0.0, 2.0]
    assert layers.relu_backward(np.array([5.0, 5.0, 5.0]), cache).tolist() == [0.0, 0.0, 5.0]


def test_relu_identity_on_positive(rng):
    x = rng.random((3, 4)) + 0.1
    np.testing.assert_array_equal(layers.relu_forward(x)[0], x)


@pytest.mark.parametrize("seed", SEEDS)
def test_relu_gradients(seed):
    r = np.random.default_rng(seed)
    x = r.standard_normal((2, 3, 4, 4))
    x[np.abs(x) < 0.05] += 0.1  # keep clear of the kink
    up = r.standard_normal(x.shape)

    def loss():
        return float((layers.relu_forward(x)[0] * up).sum())

    dx = layers.relu_backward(up, layers.relu_forward(x)[1])
    assert relative_error(dx, numerical_gradient(loss, x)) < TOL


# -- maxpool ------------------------------------------------------------------


def test_maxpool_basic():
    out, _ = layers.maxpool2_forward(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
    assert out.tolist() == [[[[4.0]]]]


def test_maxpool_odd_drops_trailing(rng):
    x = rng.random((1, 1, 5, 5))
    x[0, 0, 4, :] = 10.0
    x[0, 0, :, 4] = 10.0
    out, _ = layers.maxpool2_forward(x)
    assert out.shape == (1, 1, 2, 2)
    assert out.max() < 10.0


def test_maxpool_tie_goes_to_first():
    x = np.full((1, 1, 2, 2), 7.0)
    _, cache = layers.maxpool2_forward(x)
    dx = layers.maxpool2_backward(np.array([[[[3.0]]]]), cache)
    assert dx[0, 0].tolist() == [[3.0, 0.0], [0.0, 0.0]]


def test_maxpool_too_small():
    with pytest.raises(ValueError):
        layers.maxpool2_forward(np.zeros((1, 1, 1, 4)))


@pytest.mark.parametrize("seed", SEEDS)
def test_maxpool_gradients(seed):
    r = np.random.default_rng(seed)
    x = r.standard_normal((2, 2, 5, 5))
    up = r.standard_normal((2, 2, 2, 2))

    def loss():
        return float((layers.maxpool2_forward(x)[0] * up).sum())

    dx = layers.maxpool2_backward(up, layers.maxpool2_forward(x)[1])
    assert relative_error(dx, numerical_gradient(loss, x)) < TOL


# -- dense --------------------------------------------------------------------


def test_dense_identity_and_bias(rng):
    x = rng.standard_normal((3, 4))
    np.testing.assert_array_equal(layers.dense_forward(x, np.eye(4), np.zeros(4))[0], x)
    b = rng.standard_normal(2)
    out, _ = layers.dense_forward(np.zeros((3, 4)), rng.standard_normal((2, 4)), b)
    np.testing.assert_array_equal(out, np.tile(b, (3, 1)))


def test_dense_shape_mismatch(rng):
    with pytest.raises(ValueError):
        layers.dense_forward(rng.random((2, 3)), rng.random((2, 4)), np.zeros(2))


@pytest.mark.parametrize("seed", SEEDS)
def test_dense_gradients(seed):
    r = np.random.default_rng(seed)
    x, w, b = r.standard_normal((4, 6)), r.standard_normal((3, 6)), r.standard_normal(3)
    up = r.standard_normal((4, 3))

    def loss():
        return float((layers.dense_forward(x, w, b)[0] * up).sum())

    dx, dw, db = layers.dense_backward(up, layers.dense_forward(x, w, b)[1])
    assert relative_error(dx, numerical_gradient(loss, x)) < TOL
    assert relative_error(dw, numerical_gradient(loss, w)) < TOL
    assert relative_error(db, numerical_gradient(loss, b)) < TOL


# -- softmax cross-entropy ----------------------------------------------------


@pytest.mark.parametrize("label", [0, 1])
def test_xent_uniform(label):
    loss, probs, _ = layers.softmax_xent(np.zeros((1, 2)), np.array([label]))
    assert probs.tolist() == [[0.5, 0.5]]
    assert loss == pytest.approx(np.log(2), abs=1e-12)


def test_xent_stable():
    with np.errstate(over="raise", invalid="raise", divide="raise"):
        loss, probs, grad = layers.softmax_xent(np.array([[1000.0, 0.0]]), np.array([0]))
    assert loss == pytest.approx(0.0, abs=1e-12)
    assert np.isfinite(probs).all() and np.isfinite(grad).all()


def test_xent_rows_sum_to_one(rng):
    _, probs, _ = layers.softmax_xent(rng.standard_normal((10, 5)) * 30, rng.integers(0, 5, 10))
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)


def test_xent_label_out_of_range():
    with pytest.raises(ValueError, match="out of range"):
        layers.softmax_xent(np.zeros((2, 3)), np.array([0, 3]))


@pytest.mark.parametrize("seed", SEEDS)
def test_xent_gradients(seed):
    r = np.random.default_rng(seed)
    logits = r.standard_normal((5, 4)) * 2
    labels = r.integers(0, 4, 5)

    def loss():
        return layers.softmax_xent(logits, labels)[0]

    grad = layers.softmax_xent(logits, labels)[2]
    assert relative_error(grad, numerical_gradient(loss, logits)) < TOL


def test_relative_error_helper():
    assert relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0
    assert relative_error(np.array([1.0]), np.array([3.0])) == pytest.approx(0.5)
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0

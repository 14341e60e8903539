"""Layer forward/backward passes on NCHW arrays.

Each ``*_forward`` returns ``(out, cache)`` and the matching ``*_backward``
takes the upstream gradient plus that cache. The functions are dtype
agnostic: the network runs them in float32, the gradient checks in float64.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _im2col3(x: np.ndarray) -> np.ndarray:
    """(N, C, H, W) -> (N*H*W, C*9) patches for a 3x3 same-padded kernel."""
    n, c, h, w = x.shape
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    windows = sliding_window_view(padded, (3, 3), axis=(2, 3))  # (N, C, H, W, 3, 3)
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * 9)


def _col2im3(cols: np.ndarray, shape: tuple[int, int, int, int]) -> np.ndarray:
    n, c, h, w = shape
    cols = cols.reshape(n, h, w, c, 3, 3).transpose(0, 3, 4, 5, 1, 2)  # (N, C, 3, 3, H, W)
    padded = np.zeros((n, c, h + 2, w + 2), dtype=cols.dtype)
    for dy in range(3):
        for dx in range(3):
            padded[:, :, dy:dy + h, dx:dx + w] += cols[:, :, dy, dx]
    return padded[:, :, 1:-1, 1:-1]


def conv2d_forward(x, w, b):
    """3x3 convolution, stride 1, zero padding 1 (output keeps H x W).

    ``w`` is (F, C, 3, 3), ``b`` is (F,).
    """
    n, c, h, wd = x.shape
    f = w.shape[0]
    if w.shape[1:] != (c, 3, 3) or b.shape != (f,):
        raise ValueError(f"conv2d shape mismatch: x {x.shape}, w {w.shape}, b {b.shape}")
    cols = _im2col3(x)
    out = cols @ w.reshape(f, -1).T + b
    out = out.reshape(n, h, wd, f).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), (x.shape, cols, w)


def conv2d_backward(dout, cache):
    x_shape, cols, w = cache
    f = w.shape[0]
    dout_mat = dout.transpose(0, 2, 3, 1).reshape(-1, f)
    dw = (dout_mat.T @ cols).reshape(w.shape)
    db = dout_mat.sum(axis=0)
    dx = _col2im3(dout_mat @ w.reshape(f, -1), x_shape)
    return dx, dw, db


def batchnorm_forward(x, gamma, beta, running_mean, running_var, training: bool):
    """Per-channel batch normalization over (N, H, W).

    In training mode ``running_mean``/``running_var`` are updated in place
    as ``0.9 * old + 0.1 * batch``; the batch variance used for the update
    is the biased (population) estimate, the same one used to normalize.
    """
    if training:
        m = x.shape[0] * x.shape[2] * x.shape[3]
        if m < 2:
            raise ValueError("batchnorm in training mode needs at least 2 values per channel")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        running_mean *= 1.0 - BN_MOMENTUM
        running_mean += BN_MOMENTUM * mean
        running_var *= 1.0 - BN_MOMENTUM
        running_var += BN_MOMENTUM * var
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    return out, (xhat, inv_std, gamma, training)


def batchnorm_backward(dout, cache):
    xhat, inv_std, gamma, training = cache
    dgamma = (dout * xhat).sum(axis=(0, 2, 3))
    dbeta = dout.sum(axis=(0, 2, 3))
    dxhat = dout * gamma[None, :, None, None]
    scale = inv_std[None, :, None, None]
    if not training:
        return dxhat * scale, dgamma, dbeta
    m = xhat.shape[0] * xhat.shape[2] * xhat.shape[3]
    sum_dxhat = dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
    sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
    dx = scale / m * (m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
    return dx, dgamma, dbeta


def relu_forward(x):
    return np.maximum(x, 0), x


def relu_backward(dout, cache):
    return np.where(cache > 0, dout, 0)


def maxpool2_forward(x):
    """2x2 max pooling, stride 2. Odd trailing rows/columns are dropped."""
    n, c, h, w = x.shape
    if h < 2 or w < 2:
        raise ValueError(f"maxpool2 needs H, W >= 2, got {h}x{w}")
    ho, wo = h // 2, w // 2
    win = (
        x[:, :, : 2 * ho, : 2 * wo]
        .reshape(n, c, ho, 2, wo, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, ho, wo, 4)
    )
    # argmax returns the first maximum, i.e. raster order within the window
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, (x.shape, arg)


def maxpool2_backward(dout, cache):
    (n, c, h, w), arg = cache
    ho, wo = dout.shape[2:]
    routed = np.zeros((n, c, ho, wo, 4), dtype=dout.dtype)
    np.put_along_axis(routed, arg[..., None], dout[..., None], axis=-1)
    dx = np.zeros((n, c, h, w), dtype=dout.dtype)
    dx[:, :, : 2 * ho, : 2 * wo] = (
        routed.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * ho, 2 * wo)
    )
    return dx


def dense_forward(x, w, b):
    """Fully connected layer: ``x`` (N, D), ``w`` (K, D), ``b`` (K,)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1] or b.shape != (w.shape[0],):
        raise ValueError(f"dense shape mismatch: x {x.shape}, w {w.shape}, b {b.shape}")
    return x @ w.T + b, (x, w)


def dense_backward(dout, cache):
    x, w = cache
    return dout @ w, dout.T @ x, dout.sum(axis=0)


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent(logits, labels):
    """Mean negative log-likelihood of ``labels`` under softmax(``logits``).

    Returns ``(loss, probs, grad_logits)``.
    """
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"label out of range for {k} classes")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_probs = z - log_norm
    probs = np.exp(log_probs)
    rows = np.arange(n)
    loss = -log_probs[rows, labels].mean()
    grad = probs.copy()
    grad[rows, labels] -= 1.0
    grad /= n
    return float(loss), probs, grad

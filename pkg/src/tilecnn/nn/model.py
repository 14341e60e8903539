"""Network architecture, parameters and whole-network forward/backward."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import layers


@dataclass(frozen=True)
class Block:
    filters: int
    pool: bool


@dataclass(frozen=True)
class ArchSpec:
    """Stack of conv(3x3)-batchnorm-ReLU blocks, each optionally followed by
    a 2x2 max-pool, then one fully connected layer to ``num_classes``."""

    input_h: int
    input_w: int
    input_c: int
    num_classes: int
    blocks: tuple[Block, ...] = field(
        default=(Block(8, True), Block(16, True), Block(32, False))
    )

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.input_c not in (1, 3):
            raise ValueError("input_c must be 1 or 3")
        if not self.blocks:
            raise ValueError("need at least one conv block")
        if any(b.filters < 1 for b in self.blocks):
            raise ValueError("filter counts must be >= 1")

    @classmethod
    def default(cls, input_h: int, input_w: int, input_c: int, num_classes: int) -> "ArchSpec":
        return cls(input_h, input_w, input_c, num_classes)

    @classmethod
    def with_depth(cls, input_h, input_w, input_c, num_classes, depth: int) -> "ArchSpec":
        """``depth`` blocks with 8, 16, 32, ... filters, pooling after all but the last."""
        if depth < 1:
            raise ValueError("depth must be >= 1")
        blocks = tuple(Block(8 * 2**i, i < depth - 1) for i in range(depth))
        return cls(input_h, input_w, input_c, num_classes, blocks)

    def feature_shapes(self) -> list[tuple[int, int, int]]:
        """(channels, H, W) after each block; raises if a pool would empty the map."""
        h, w = self.input_h, self.input_w
        shapes = []
        for i, b in enumerate(self.blocks):
            if b.pool:
                if h < 2 or w < 2:
                    raise ValueError(
                        f"block {i} pools a {h}x{w} feature map; input {self.input_h}x{self.input_w} is too small"
                    )
                h, w = h // 2, w // 2
            shapes.append((b.filters, h, w))
        return shapes

    @property
    def flat_features(self) -> int:
        c, h, w = self.feature_shapes()[-1]
        return c * h * w


class Model:
    """Parameters plus batchnorm running statistics for an :class:`ArchSpec`.

    ``params`` holds trainable arrays and ``buffers`` the running statistics,
    both keyed by name in the fixed layer order used for serialization.
    """

    def __init__(self, arch: ArchSpec, params: dict, buffers: dict, mode: str = "train"):
        self.arch = arch
        self.params = params
        self.buffers = buffers
        self.mode = mode

    @property
    def dtype(self):
        return self.params["dense.w"].dtype

    def state(self) -> dict[str, np.ndarray]:
        """Parameters and running statistics in serialization order."""
        merged = {**self.params, **self.buffers}
        return {name: merged[name] for name in state_names(self.arch)}

    def copy(self) -> "Model":
        return copy.deepcopy(self)

    def astype(self, dtype) -> "Model":
        return Model(
            self.arch,
            {k: v.astype(dtype) for k, v in self.params.items()},
            {k: v.astype(dtype) for k, v in self.buffers.items()},
            self.mode,
        )

    def is_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.state().values())


def state_names(arch: ArchSpec) -> list[str]:
    """Per block: conv w, b, bn gamma, beta, running mean, running var; then dense w, b."""
    names = []
    for i in range(len(arch.blocks)):
        names += [f"conv{i}.w", f"conv{i}.b", f"bn{i}.gamma", f"bn{i}.beta",
                  f"bn{i}.running_mean", f"bn{i}.running_var"]
    return names + ["dense.w", "dense.b"]


def param_shapes(arch: ArchSpec) -> dict[str, tuple[int, ...]]:
    shapes = {}
    c_in = arch.input_c
    for i, b in enumerate(arch.blocks):
        shapes[f"conv{i}.w"] = (b.filters, c_in, 3, 3)
        shapes[f"conv{i}.b"] = (b.filters,)
        for s in ("gamma", "beta", "running_mean", "running_var"):
            shapes[f"bn{i}.{s}"] = (b.filters,)
        c_in = b.filters
    shapes["dense.w"] = (arch.num_classes, arch.flat_features)
    shapes["dense.b"] = (arch.num_classes,)
    return shapes


def init_model(arch: ArchSpec, seed: int, dtype=np.float32) -> Model:
    """He-normal weights, zero biases, identity batchnorm."""
    shapes = param_shapes(arch)  # validates pooled sizes
    rng = np.random.default_rng(seed)
    params, buffers = {}, {}
    for i in range(len(arch.blocks)):
        shape = shapes[f"conv{i}.w"]
        fan_in = shape[1] * 9
        params[f"conv{i}.w"] = (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)
        params[f"conv{i}.b"] = np.zeros(shape[0], dtype=dtype)
        params[f"bn{i}.gamma"] = np.ones(shape[0], dtype=dtype)
        params[f"bn{i}.beta"] = np.zeros(shape[0], dtype=dtype)
        buffers[f"bn{i}.running_mean"] = np.zeros(shape[0], dtype=dtype)
        buffers[f"bn{i}.running_var"] = np.ones(shape[0], dtype=dtype)
    k, d = shapes["dense.w"]
    params["dense.w"] = (rng.standard_normal((k, d)) * np.sqrt(2.0 / d)).astype(dtype)
    params["dense.b"] = np.zeros(k, dtype=dtype)
    return Model(arch, params, buffers)


def _to_nchw(model: Model, batch: np.ndarray) -> np.ndarray:
    arch = model.arch
    batch = np.asarray(batch)
    if batch.ndim == 3:
        batch = batch[None]
    if batch.shape[1:] != (arch.input_h, arch.input_w, arch.input_c):
        raise ValueError(
            f"tiles of shape {batch.shape[1:]} do not match model input "
            f"{(arch.input_h, arch.input_w, arch.input_c)}"
        )
    return np.ascontiguousarray(batch.transpose(0, 3, 1, 2), dtype=model.dtype)


def forward_logits(model: Model, batch: np.ndarray, training: bool | None = None):
    """Run the network on ``batch`` of (N, H, W, C) tiles; returns (logits, cache).

    With ``training`` true, batchnorm uses batch statistics and updates the
    running statistics. Defaults to ``model.mode == "train"``.
    """
    if training is None:
        training = model.mode == "train"
    p, buf = model.params, model.buffers
    h = _to_nchw(model, batch)
    caches = []
    for i, block in enumerate(model.arch.blocks):
        h, c_conv = layers.conv2d_forward(h, p[f"conv{i}.w"], p[f"conv{i}.b"])
        h, c_bn = layers.batchnorm_forward(
            h, p[f"bn{i}.gamma"], p[f"bn{i}.beta"],
            buf[f"bn{i}.running_mean"], buf[f"bn{i}.running_var"], training,
        )
        h, c_relu = layers.relu_forward(h)
        c_pool = None
        if block.pool:
            h, c_pool = layers.maxpool2_forward(h)
        caches.append((c_conv, c_bn, c_relu, c_pool))
    feat_shape = h.shape
    logits, c_dense = layers.dense_forward(h.reshape(h.shape[0], -1), p["dense.w"], p["dense.b"])
    return logits, (caches, feat_shape, c_dense, logits)


def forward(model: Model, batch: np.ndarray, training: bool | None = None):
    """Class probabilities (N, K) for ``batch`` plus the cache for :func:`backward`."""
    logits, cache = forward_logits(model, batch, training)
    return layers.softmax(logits), cache


def backward(model: Model, cache, grad_logits) -> dict[str, np.ndarray]:
    """Gradients of a scalar w.r.t. every trainable parameter, given d(scalar)/d(logits)."""
    caches, feat_shape, c_dense, _ = cache
    grads = {}
    dh, grads["dense.w"], grads["dense.b"] = layers.dense_backward(grad_logits, c_dense)
    dh = dh.reshape(feat_shape)
    for i in reversed(range(len(caches))):
        c_conv, c_bn, c_relu, c_pool = caches[i]
        if c_pool is not None:
            dh = layers.maxpool2_backward(dh, c_pool)
        dh = layers.relu_backward(dh, c_relu)
        dh, grads[f"bn{i}.gamma"], grads[f"bn{i}.beta"] = layers.batchnorm_backward(dh, c_bn)
        dh, grads[f"conv{i}.w"], grads[f"conv{i}.b"] = layers.conv2d_backward(dh, c_conv)
    return grads


def predict_proba(model: Model, tiles: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Inference-mode probabilities, computed in fixed-size chunks."""
    tiles = np.asarray(tiles)
    out = []
    for start in range(0, len(tiles), batch_size):
        probs, _ = forward(model, tiles[start:start + batch_size], training=False)
        out.append(probs)
    if not out:
        return np.zeros((0, model.arch.num_classes), dtype=model.dtype)
    return np.concatenate(out)

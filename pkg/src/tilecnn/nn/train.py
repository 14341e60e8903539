"""Minibatch SGD with momentum, and accuracy evaluation."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ..dataset import LabeledTileSet
from . import layers
from .model import Model, backward, forward_logits, predict_proba

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Raised when the training loss becomes NaN or infinite."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    shuffle_each_epoch: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    train_accuracy: list[float] = field(default_factory=list)
    val_accuracy: float | None = None
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def _check_dims(model: Model, ds: LabeledTileSet, what: str) -> None:
    arch = model.arch
    expected = (arch.input_h, arch.input_w, arch.input_c)
    if ds.tile_shape != expected:
        raise ValueError(f"{what} tiles are {ds.tile_shape}, model expects {expected}")
    if ds.num_classes != arch.num_classes:
        raise ValueError(f"{what} has {ds.num_classes} classes, model has {arch.num_classes}")


def train(
    model: Model,
    train_set: LabeledTileSet,
    val_set: LabeledTileSet | None,
    cfg: TrainConfig,
) -> tuple[Model, TrainReport]:
    """Train ``model`` in place and return it with a per-epoch report.

    Update rule per parameter: ``v = momentum * v - lr * g; p = p + v``.
    Epoch loss/accuracy are averaged over the minibatches as seen during
    training (batch statistics, parameters mid-update).
    """
    if len(train_set) == 0:
        raise ValueError("training set is empty")
    _check_dims(model, train_set, "training set")
    if val_set is not None:
        _check_dims(model, val_set, "validation set")

    start = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    lr = model.dtype.type(cfg.learning_rate)
    mom = model.dtype.type(cfg.momentum)
    n = len(train_set)
    report = TrainReport()
    model.mode = "train"

    for epoch in range(cfg.epochs):
        order = rng.permutation(n) if cfg.shuffle_each_epoch else np.arange(n)
        loss_sum, correct = 0.0, 0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            labels = train_set.labels[idx]
            logits, cache = forward_logits(model, train_set.tiles[idx], training=True)
            loss, probs, grad_logits = layers.softmax_xent(logits, labels)
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss {loss} at epoch {epoch + 1}, batch starting at {lo}; "
                    f"try a smaller learning rate (currently {cfg.learning_rate})"
                )
            grads = backward(model, cache, grad_logits)
            for name, g in grads.items():
                v = velocity[name]
                v *= mom
                v -= lr * g
                model.params[name] += v
            loss_sum += loss * len(idx)
            correct += int((probs.argmax(axis=1) == labels).sum())
        report.train_loss.append(loss_sum / n)
        report.train_accuracy.append(correct / n)
        logger.info(
            "epoch %d/%d  loss %.4f  acc %.3f",
            epoch + 1, cfg.epochs, report.train_loss[-1], report.train_accuracy[-1],
        )

    model.mode = "infer"
    if val_set is not None and len(val_set):
        report.val_accuracy = evaluate(model, val_set)
    report.seconds = time.perf_counter() - start
    return model, report


def evaluate(model: Model, ds: LabeledTileSet) -> float:
    """Fraction of tiles whose most probable class (lowest index on ties) is the label."""
    if len(ds) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    _check_dims(model, ds, "evaluation set")
    probs = predict_proba(model, ds.tiles)
    return float((probs.argmax(axis=1) == ds.labels).mean())

from .layers import softmax_xent
from .model import (
    ArchSpec,
    Block,
    Model,
    backward,
    forward,
    forward_logits,
    init_model,
    predict_proba,
)
from .train import TrainConfig, TrainingDiverged, TrainReport, evaluate, train

__all__ = [
    "ArchSpec",
    "Block",
    "Model",
    "TrainConfig",
    "TrainReport",
    "TrainingDiverged",
    "backward",
    "evaluate",
    "forward",
    "forward_logits",
    "init_model",
    "predict_proba",
    "softmax_xent",
    "train",
]

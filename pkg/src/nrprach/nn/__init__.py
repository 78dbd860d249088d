"""Small numpy neural-network engine: layers, the residual classifier, optimizers, training."""

from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from .kernels import BACKEND
from .model import ModelConfig, ResidualClassifier
from .optim import SGD, Adam, step_adam, step_sgd
from .train import TrainConfig, TrainingDivergedError, accuracy, train

__all__ = [
    "BACKEND", "ModelConfig", "ResidualClassifier", "SGD", "Adam", "step_sgd", "step_adam",
    "TrainConfig", "TrainingDivergedError", "train", "accuracy", "save_checkpoint",
    "load_checkpoint", "read_checkpoint",
]

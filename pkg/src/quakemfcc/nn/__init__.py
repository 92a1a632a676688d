from .estimators import CNNClassifier, LSTMClassifier, make_classifier
from .model import Model, ModelSpec, forward, init_params, loss_and_backward
from .optim import AdamState, adam_step
from .serialize import ModelFileError, load_model, save_model
from .train import TrainConfig, TrainingDivergedError, train

__all__ = [
    "AdamState", "CNNClassifier", "LSTMClassifier", "Model", "ModelFileError", "ModelSpec",
    "TrainConfig", "TrainingDivergedError", "adam_step", "forward", "init_params",
    "load_model", "loss_and_backward", "make_classifier", "save_model", "train",
]

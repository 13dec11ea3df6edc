from .data import assemble_25d, stack_inputs
from .model import MicroNet, MicroNetConfig, backward, loss_and_grads
from .serialize import load, save
from .train import Adam, TrainConfig, TrainingData, cosine_lr, predict, train

__all__ = [
    "Adam", "MicroNet", "MicroNetConfig", "TrainConfig", "TrainingData", "assemble_25d", "backward",
    "cosine_lr", "load", "loss_and_grads", "predict", "save", "stack_inputs", "train",
]

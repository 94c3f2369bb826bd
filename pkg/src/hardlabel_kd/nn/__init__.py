"""Small numpy network engine: conv/dense stacks, KD loss, Adam/SGD."""
from .gradcheck import numerical_gradient, relative_error
from .layers import Conv2D, Dense, Flatten, MaxPool2D, ReLU
from .losses import cross_entropy, kd_loss, softmax
from .network import PRESETS, Network, NetworkSpec, load_checkpoint, preset
from .optim import SGD, Adam, make_optimizer
from .training import DistillConfig, EvalResult, TrainResult, evaluate, train_classifier, train_student

__all__ = [
    "Conv2D", "Dense", "Flatten", "MaxPool2D", "ReLU",
    "cross_entropy", "kd_loss", "softmax",
    "PRESETS", "Network", "NetworkSpec", "load_checkpoint", "preset",
    "SGD", "Adam", "make_optimizer",
    "DistillConfig", "EvalResult", "TrainResult", "evaluate", "train_classifier", "train_student",
    "numerical_gradient", "relative_error",
]

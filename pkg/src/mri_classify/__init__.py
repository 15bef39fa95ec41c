"""Binary brain-MRI classification: a VGG-19 transfer-learning pipeline on a
small tape-based autodiff core, with deterministic augmentation, leakage-safe
splits, and full evaluation reports."""

from .estimator import Vgg19TransferClassifier
from .model import ModelGraph, build_model
from .tensor import GradTape, Tensor, backward, finite_diff_grad
from .train import TrainConfig, fit

__all__ = [
    "GradTape",
    "ModelGraph",
    "Tensor",
    "TrainConfig",
    "Vgg19TransferClassifier",
    "backward",
    "build_model",
    "finite_diff_grad",
    "fit",
]

__version__ = "0.1.0"

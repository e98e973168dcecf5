"""Physics-guided underwater image enhancement with capsule feature clustering."""

from .tensor import Tensor, Rng, no_grad, grad_check
from .model import ModelConfig, ModelOutput, toy_model_config, forward
from .capsule import CapsuleConfig
from .losses import LossConfig, LossReport, total_loss
from .data import SyntheticConfig, toy_synthetic_config
from .trainer import TrainConfig, toy_train_config, train, evaluate
from .metrics import psnr, ssim

__version__ = "0.1.0"

__all__ = [
    "Tensor", "Rng", "no_grad", "grad_check",
    "ModelConfig", "ModelOutput", "toy_model_config", "forward",
    "CapsuleConfig", "LossConfig", "LossReport", "total_loss",
    "SyntheticConfig", "toy_synthetic_config",
    "TrainConfig", "toy_train_config", "train", "evaluate",
    "psnr", "ssim",
    "__version__",
]

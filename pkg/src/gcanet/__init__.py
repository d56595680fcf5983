"""Forgery localization network with gated context attention, built on a
minimal numpy autodiff core."""

from .autodiff import Tensor, gradcheck, no_grad
from .estimator import GCANetLocalizer
from .frontend import Frontend, FrontendConfig
from .gca import GcaBlock, GcaConfig
from .losses import LossConfig, bce_loss, combined_loss, dice_loss, focal_loss
from .metrics import MetricsReport, evaluate_set, fpr_neglog, image_f1, pixel_auc, pixel_f1
from .network import GCANet, NetworkConfig
from .synth import DatasetSpec, dataset_build
from .train import TrainConfig, ablate, evaluate, load_model, train

__version__ = "1.0.0"

__all__ = [
    "Tensor", "gradcheck", "no_grad",
    "GCANetLocalizer",
    "Frontend", "FrontendConfig",
    "GcaBlock", "GcaConfig",
    "LossConfig", "bce_loss", "combined_loss", "dice_loss", "focal_loss",
    "MetricsReport", "evaluate_set", "fpr_neglog", "image_f1", "pixel_auc",
    "pixel_f1",
    "GCANet", "NetworkConfig",
    "DatasetSpec", "dataset_build",
    "TrainConfig", "ablate", "evaluate", "load_model", "train",
    "__version__",
]

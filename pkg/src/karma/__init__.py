"""Low-rank Kolmogorov-Arnold segmentation network and tooling."""

from ._kernels import BACKEND as kernel_backend
from .model import ModelConfig, build_model, config_for_variant, flash_config, high_config, karma_config
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "ModelConfig",
    "build_model",
    "config_for_variant",
    "karma_config",
    "high_config",
    "flash_config",
    "kernel_backend",
    "__version__",
]

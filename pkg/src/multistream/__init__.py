"""Multi-stream self-attention encoder on a small NumPy autograd core."""

from ._kernels import BACKEND
from .checkpoint import load_checkpoint, save_checkpoint
from .constraint import SemiOrthoConfig, orthonormalize, semi_ortho_penalty, semi_ortho_step
from .data import FrameBatch, TaskSpec, generate_synthetic, read_features, write_features
from .errors import (ConfigError, CorruptionError, DimensionError, FormatError, GraphError,
                     MultistreamError, NumericError)
from .gradcheck import GradCheckReport, finite_diff_check
from .model import (BlockConfig, ModelConfig, MultiStreamBlock, MultiStreamEncoder,
                    StreamConfig, StreamEncoder, best_model_config, param_count)
from .tensor import Tensor, no_grad
from .train import TrainConfig, evaluate, fit

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "BlockConfig", "ConfigError", "CorruptionError", "DimensionError",
    "FormatError", "FrameBatch", "GradCheckReport", "GraphError", "ModelConfig",
    "MultiStreamBlock", "MultiStreamEncoder", "MultistreamError", "NumericError",
    "SemiOrthoConfig", "StreamConfig", "StreamEncoder", "TaskSpec", "Tensor", "TrainConfig",
    "best_model_config", "evaluate", "finite_diff_check", "fit", "generate_synthetic",
    "load_checkpoint", "no_grad", "orthonormalize", "param_count", "read_features",
    "save_checkpoint", "semi_ortho_penalty", "semi_ortho_step", "write_features",
]

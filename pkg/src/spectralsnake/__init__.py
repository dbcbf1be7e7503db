"""spectralsnake: hyperspectral patch classification with dynamic snake convolution."""

from .tensor import Tensor, ShapeError, no_grad, relu, tanh
from .nn import (
    BatchNorm,
    avg_pool3d,
    batch_norm,
    conv3d,
    linear,
    softmax_cross_entropy,
)
from .optim import AdamState, adam_step
from .gradcheck import grad_check
from .snake import (
    OffsetField,
    SnakeAxis,
    SnakeConvLayer,
    SnakeKernelSpec,
    SnakePositionSet,
    accumulate_positions,
    bilinear_sample,
    predict_offsets,
    snake_conv_backward,
    snake_conv_forward,
)
from .fusion import FusionConfig, TemplateSet, build_templates, fuse_eval, fuse_train
from .network import (
    ConfigError,
    ModelParams,
    NetworkConfig,
    build_model,
    count_params,
    forward,
    load_checkpoint,
    save_checkpoint,
)

__version__ = "0.1.0"

__all__ = [
    "Tensor", "ShapeError", "no_grad", "relu", "tanh",
    "BatchNorm", "avg_pool3d", "batch_norm", "conv3d", "linear", "softmax_cross_entropy",
    "AdamState", "adam_step", "grad_check",
    "OffsetField", "SnakeAxis", "SnakeConvLayer", "SnakeKernelSpec", "SnakePositionSet",
    "accumulate_positions", "bilinear_sample", "predict_offsets",
    "snake_conv_backward", "snake_conv_forward",
    "FusionConfig", "TemplateSet", "build_templates", "fuse_eval", "fuse_train",
    "ConfigError", "ModelParams", "NetworkConfig", "build_model", "count_params", "forward",
    "load_checkpoint", "save_checkpoint",
]

"""Dense NCHW tensors, differentiable ops, and reverse-mode autodiff."""

from .autodiff import DiffValue, backward, leaf
from .flags import NonFiniteError, debug_checks_enabled, set_debug_checks
from .ops import (
    IGNORE_INDEX,
    ConvSpec,
    RunningStats,
    add,
    batchnorm2d,
    concat_channels,
    conv2d,
    depthwise_conv2d,
    mean_all,
    mul,
    relu6,
    resize_bilinear,
    resize_bilinear_array,
    smul,
    softmax_cross_entropy,
    softmax_probs,
    sum_all,
)
from .tensor import load_ten, save_ten, ten_bytes, ten_from_bytes

__all__ = [
    "DiffValue",
    "backward",
    "leaf",
    "NonFiniteError",
    "set_debug_checks",
    "debug_checks_enabled",
    "IGNORE_INDEX",
    "ConvSpec",
    "RunningStats",
    "add",
    "batchnorm2d",
    "concat_channels",
    "conv2d",
    "depthwise_conv2d",
    "mean_all",
    "mul",
    "relu6",
    "resize_bilinear",
    "resize_bilinear_array",
    "smul",
    "softmax_cross_entropy",
    "softmax_probs",
    "sum_all",
    "load_ten",
    "save_ten",
    "ten_bytes",
    "ten_from_bytes",
]

"""Minimal reverse-mode autodiff engine used by every network in the package."""

from .conv import (
    conv3d,
    conv3d_kernel,
    conv_output_extent,
    conv_transpose3d,
    transposed_conv_output_extent,
)
from .gradcheck import GradCheckResult, finite_diff_check, relative_error
from .layers import (
    BN_EPSILON,
    BN_MOMENTUM,
    LEAKY_SLOPE,
    BatchNorm,
    Conv3d,
    Dense,
    LayerSpec,
    Module,
    TransposedConv3d,
    activate,
    batch_norm,
)
from .optim import Adam
from .tensor import (
    Parameter,
    Tensor,
    add,
    broadcast_to,
    concat,
    div,
    exp,
    grad,
    graph_ops,
    is_grad_enabled,
    leaky_relu,
    log,
    make_node,
    matmul,
    mean,
    mul,
    no_grad,
    pad,
    power,
    relu,
    reshape,
    set_grad_enabled,
    sigmoid,
    split,
    sqrt,
    squared_norm,
    stack,
    sub,
    sum_,
    sum_to,
    transpose,
    unit_step,
)


def dense(x, weight, bias):
    """``x @ weight + bias`` for a rank-2 batch."""
    return matmul(x, weight) + bias

"""Parameterised layers built on the autodiff core."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from ..errors import DegenerateBatchError, DimensionError, NotDifferentiableError
from .conv import conv3d, conv_output_extent, conv_transpose3d, transposed_conv_output_extent
from .tensor import Parameter, Tensor, _as_tensor, is_grad_enabled, leaky_relu, make_node, relu, sigmoid

LEAKY_SLOPE = 0.2
BN_EPSILON = 1e-5
BN_MOMENTUM = 0.9

LAYER_KINDS = (
    "dense", "conv3d", "transposed_conv3d", "batch_norm", "activation",
    "reshape", "concat", "stack", "split", "sum_axis",
)
ACTIVATIONS = ("relu", "leaky_relu", "sigmoid", "none")


@dataclass(frozen=True)
class LayerSpec:
    """Declarative description of one layer in a chain."""

    kind: str
    filters: int = 1
    kernel: tuple[int, int, int] = (1, 1, 1)
    strides: tuple[int, int, int] = (1, 1, 1)
    activation: str = "none"

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.filters < 1:
            raise ValueError("filters must be positive")
        if len(self.kernel) != 3 or len(self.strides) != 3:
            raise ValueError("kernel and strides need three components")
        if min(self.kernel) < 1 or min(self.strides) < 1:
            raise ValueError("kernel and stride components must be >= 1")

    @property
    def triple(self) -> tuple:
        return (self.kind, self.filters, self.kernel, self.strides)

    def output_extents(self, extents: tuple[int, int, int]) -> tuple[int, int, int]:
        if self.kind == "conv3d":
            return tuple(conv_output_extent(n, k, s) for n, k, s in zip(extents, self.kernel, self.strides))
        if self.kind == "transposed_conv3d":
            return tuple(
                transposed_conv_output_extent(n, k, s) for n, k, s in zip(extents, self.kernel, self.strides)
            )
        return tuple(extents)


def activate(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "leaky_relu":
        return leaky_relu(x, LEAKY_SLOPE)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "none":
        return x
    raise ValueError(f"unknown activation {kind!r}")


def batch_norm(x, gamma, beta, running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = BN_MOMENTUM, eps: float = BN_EPSILON) -> Tensor:
    """Per-channel batch normalisation over every axis but the last.

    In training mode the running statistics are updated in place. The
    training-mode gradient is first order only.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    if not training:
        scale = gamma * (1.0 / np.sqrt(running_var + eps))
        return (x - running_mean) * scale + beta
    if x.shape[0] < 2:
        raise DegenerateBatchError("batch normalisation in training mode needs batch size >= 2")
    n = int(np.prod(x.shape[:-1]))
    # reductions over the flattened batch axes run as BLAS matrix-vector products
    ones = np.ones(n)
    x2 = x.data.reshape(n, -1)
    mu = (ones @ x2) / n
    centered = x2 - mu
    var = (ones @ (centered * centered)) / n
    inv_std = 1.0 / np.sqrt(var + eps)
    out = (centered * (gamma.data * inv_std) + beta.data).reshape(x.shape)
    running_mean *= momentum
    running_mean += (1.0 - momentum) * mu
    running_var *= momentum
    running_var += (1.0 - momentum) * var * (n / max(n - 1, 1))

    def vjp(g, needs):
        if is_grad_enabled():
            raise NotDifferentiableError("training-mode batch_norm supports first-order gradients only")
        g2 = g.data.reshape(n, -1)
        xhat = centered * inv_std
        g_sum = ones @ g2
        gx_sum = ones @ (g2 * xhat)
        dx = None
        if needs[0]:
            dx = ((gamma.data * inv_std / n) * (n * g2 - g_sum - xhat * gx_sum)).reshape(x.shape)
        return (
            Tensor(dx) if dx is not None else None,
            Tensor(gx_sum) if needs[1] else None,
            Tensor(g_sum) if needs[2] else None,
        )

    return make_node(out, (x, gamma, beta), vjp, "batch_norm")


class Module:
    """Container with hierarchical parameter and buffer names."""

    def __init__(self, name: str):
        self.name = name
        self._children: list[Module] = []
        self._params: dict[str, Parameter] = {}
        self._buffers: dict[str, np.ndarray] = {}

    def add(self, child: "Module") -> "Module":
        self._children.append(child)
        return child

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        base = f"{prefix}{self.name}"
        for key, p in self._params.items():
            yield f"{base}/{key}", p
        for child in self._children:
            yield from child.named_parameters(base + "/")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        base = f"{prefix}{self.name}"
        for key, b in self._buffers.items():
            yield f"{base}/{key}", b
        for child in self._children:
            yield from child.named_buffers(base + "/")

    def parameters(self) -> dict[str, Parameter]:
        return dict(self.named_parameters())

    def buffers(self) -> dict[str, np.ndarray]:
        return dict(self.named_buffers())

    def modules(self) -> Iterator["Module"]:
        yield self
        for child in self._children:
            yield from child.modules()


def _he_std(fan_in: int, activation: str) -> float:
    if activation == "leaky_relu":
        gain = 2.0 / (1.0 + LEAKY_SLOPE**2)
    elif activation == "relu":
        gain = 2.0
    else:
        gain = 1.0
    return float(np.sqrt(gain / max(fan_in, 1)))


class Dense(Module):
    def __init__(self, name: str, n_in: int, n_out: int, rng: np.random.Generator,
                 activation: str = "none", init_std: float | None = None):
        super().__init__(name)
        self.spec = LayerSpec("dense", n_out, activation=activation)
        std = _he_std(n_in, activation) if init_std is None else init_std
        self._params["weight"] = Parameter(rng.normal(0.0, std, (n_in, n_out)))
        self._params["bias"] = Parameter(np.zeros(n_out))

    def __call__(self, x: Tensor) -> Tensor:
        w = self._params["weight"]
        if x.ndim != 2 or x.shape[1] != w.shape[0]:
            raise DimensionError(f"dense layer {self.name} expects [batch, {w.shape[0]}], got {x.shape}")
        return x @ w + self._params["bias"]


class Conv3d(Module):
    def __init__(self, name: str, c_in: int, spec: LayerSpec, rng: np.random.Generator,
                 zero_init: bool = False):
        super().__init__(name)
        self.spec = spec
        shape = (*spec.kernel, c_in, spec.filters)
        if zero_init:
            kernel = np.zeros(shape)
        else:
            kernel = rng.normal(0.0, _he_std(int(np.prod(spec.kernel)) * c_in, spec.activation), shape)
        self._params["kernel"] = Parameter(kernel)
        self._params["bias"] = Parameter(np.zeros(spec.filters))

    def __call__(self, x: Tensor) -> Tensor:
        return conv3d(x, self._params["kernel"], self.spec.strides) + self._params["bias"]


class TransposedConv3d(Module):
    """Kernel is stored as the forward-conv kernel ``[k..., c_out, c_in]``."""

    def __init__(self, name: str, c_in: int, spec: LayerSpec, rng: np.random.Generator):
        super().__init__(name)
        self.spec = spec
        overlap = max(1, int(np.prod(spec.kernel)) // int(np.prod(spec.strides)))
        std = _he_std(c_in * overlap, "relu")
        self._params["kernel"] = Parameter(rng.normal(0.0, std, (*spec.kernel, spec.filters, c_in)))
        self._params["bias"] = Parameter(np.zeros(spec.filters))

    def __call__(self, x: Tensor) -> Tensor:
        return conv_transpose3d(x, self._params["kernel"], self.spec.strides) + self._params["bias"]


class BatchNorm(Module):
    def __init__(self, name: str, channels: int):
        super().__init__(name)
        self.spec = LayerSpec("batch_norm", channels)
        self._params["gamma"] = Parameter(np.ones(channels))
        self._params["beta"] = Parameter(np.zeros(channels))
        self._buffers["running_mean"] = np.zeros(channels)
        self._buffers["running_var"] = np.ones(channels)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return batch_norm(
            x, self._params["gamma"], self._params["beta"],
            self._buffers["running_mean"], self._buffers["running_var"], training,
        )

"""Valid (unpadded) strided 3-D convolution and its two adjoints.

Layout is channels-last: inputs are ``[batch, bar, time, pitch, channel]`` and
kernels are ``[k_bar, k_time, k_pitch, c_in, c_out]``. The three ops below are
the partial derivatives of one trilinear form, so each one's gradient rule is
written with the other two and double backward comes for free.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from ..errors import DimensionError
from .tensor import Tensor, _as_tensor, make_node


def conv_output_extent(n: int, kernel: int, stride: int) -> int:
    """Extent after a valid convolution: floor((n - k) / s) + 1."""
    if kernel < 1 or stride < 1:
        raise DimensionError(f"kernel {kernel} and stride {stride} must be >= 1")
    if kernel > n:
        raise DimensionError(f"kernel {kernel} larger than input extent {n}")
    return (n - kernel) // stride + 1


def transposed_conv_output_extent(n: int, kernel: int, stride: int) -> int:
    """Extent after a valid transposed convolution: (n - 1) * s + k."""
    if kernel < 1 or stride < 1:
        raise DimensionError(f"kernel {kernel} and stride {stride} must be >= 1")
    return (n - 1) * stride + kernel


def _check_rank(x: np.ndarray, what: str) -> None:
    if x.ndim != 5:
        raise DimensionError(f"{what} must be rank 5 [batch, bar, time, pitch, ch], got {x.shape}")


def _patches(x: np.ndarray, kernel, strides) -> np.ndarray:
    """Read-only view ``[B, O1, O2, O3, k1, k2, k3, C]`` of the receptive fields."""
    b, d1, d2, d3, c = x.shape
    outs = [conv_output_extent(d, k, s) for d, k, s in zip((d1, d2, d3), kernel, strides)]
    sb, s1, s2, s3, sc = x.strides
    shape = (b, *outs, *kernel, c)
    st = (sb, s1 * strides[0], s2 * strides[1], s3 * strides[2], s1, s2, s3, sc)
    return as_strided(x, shape=shape, strides=st, writeable=False)


def conv3d_np(x: np.ndarray, k: np.ndarray, strides) -> np.ndarray:
    _check_rank(x, "conv input")
    if k.ndim != 5 or k.shape[3] != x.shape[4]:
        raise DimensionError(f"kernel {k.shape} does not match input channels of {x.shape}")
    kernel = k.shape[:3]
    c_out = k.shape[4]
    if kernel == (1, 1, 1) and tuple(strides) == (1, 1, 1):
        return (x.reshape(-1, x.shape[4]) @ k.reshape(-1, c_out)).reshape(x.shape[:4] + (c_out,))
    p = _patches(np.ascontiguousarray(x), kernel, strides)
    lead = p.shape[:4]
    cols = p.reshape(int(np.prod(lead)), -1)
    return (cols @ k.reshape(-1, c_out)).reshape(lead + (c_out,))


def conv_transpose3d_np(y: np.ndarray, k: np.ndarray, strides, spatial) -> np.ndarray:
    """Adjoint of :func:`conv3d_np` in its input; ``spatial`` is the input extent."""
    _check_rank(y, "transposed conv input")
    if k.ndim != 5 or k.shape[4] != y.shape[4]:
        raise DimensionError(f"kernel {k.shape} does not match channels of {y.shape}")
    kernel = k.shape[:3]
    c_x = k.shape[3]
    b = y.shape[0]
    outs = y.shape[1:4]
    spatial = tuple(int(n) for n in spatial)
    for n, o, kk, s in zip(spatial, outs, kernel, strides):
        if conv_output_extent(n, kk, s) != o:
            raise DimensionError(f"target extent {n} incompatible with {o} (k={kk}, s={s})")
    if tuple(strides) == (1, 1, 1) and kernel != (1, 1, 1):
        # unit stride: full correlation with the flipped, channel-swapped kernel
        widths = [(0, 0)] + [(kk - 1, kk - 1) for kk in kernel] + [(0, 0)]
        flipped = np.ascontiguousarray(k[::-1, ::-1, ::-1].transpose(0, 1, 2, 4, 3))
        return conv3d_np(np.pad(y, widths), flipped, (1, 1, 1))
    cols = y.reshape(-1, y.shape[4]) @ k.reshape(-1, y.shape[4]).T
    cols = cols.reshape(b, *outs, *kernel, c_x)
    if tuple(kernel) == tuple(strides) and all(o * kk == n for o, kk, n in zip(outs, kernel, spatial)):
        # non-overlapping tiles: a pure rearrangement
        return np.ascontiguousarray(cols.transpose(0, 1, 4, 2, 5, 3, 6, 7)).reshape(b, *spatial, c_x)
    out = np.zeros((b, *spatial, c_x))
    s1, s2, s3 = strides
    o1, o2, o3 = outs
    for i, j, l in np.ndindex(*kernel):
        out[:, i : i + s1 * (o1 - 1) + 1 : s1, j : j + s2 * (o2 - 1) + 1 : s2,
            l : l + s3 * (o3 - 1) + 1 : s3, :] += cols[:, :, :, :, i, j, l, :]
    return out


def conv3d_kernel_np(x: np.ndarray, y: np.ndarray, kernel, strides) -> np.ndarray:
    """Adjoint of :func:`conv3d_np` in its kernel."""
    _check_rank(x, "conv input")
    _check_rank(y, "conv output gradient")
    p = _patches(np.ascontiguousarray(x), tuple(kernel), strides)
    if p.shape[:4] != y.shape[:4]:
        raise DimensionError(f"output extents {y.shape[:4]} vs patches {p.shape[:4]}")
    n = int(np.prod(y.shape[:4]))
    cols = p.reshape(n, -1)
    return (cols.T @ y.reshape(n, y.shape[4])).reshape(*kernel, x.shape[4], y.shape[4])


def _strides3(strides) -> tuple[int, int, int]:
    strides = tuple(int(s) for s in strides)
    if len(strides) != 3 or min(strides) < 1:
        raise DimensionError(f"strides must be three integers >= 1, got {strides}")
    return strides


def conv3d(x, k, strides=(1, 1, 1)) -> Tensor:
    x, k = _as_tensor(x), _as_tensor(k)
    strides = _strides3(strides)

    def vjp(g, needs):
        return (
            conv_transpose3d(g, k, strides, x.shape[1:4]) if needs[0] else None,
            conv3d_kernel(x, g, k.shape[:3], strides) if needs[1] else None,
        )

    return make_node(conv3d_np(x.data, k.data, strides), (x, k), vjp, "conv3d")


def conv_transpose3d(y, k, strides=(1, 1, 1), spatial=None) -> Tensor:
    """Transposed convolution; ``spatial`` defaults to (n - 1) * s + k per axis."""
    y, k = _as_tensor(y), _as_tensor(k)
    strides = _strides3(strides)
    if spatial is None:
        spatial = tuple(
            transposed_conv_output_extent(n, kk, s) for n, kk, s in zip(y.shape[1:4], k.shape[:3], strides)
        )
    spatial = tuple(int(n) for n in spatial)

    def vjp(g, needs):
        return (
            conv3d(g, k, strides) if needs[0] else None,
            conv3d_kernel(g, y, k.shape[:3], strides) if needs[1] else None,
        )

    return make_node(conv_transpose3d_np(y.data, k.data, strides, spatial), (y, k), vjp, "conv_transpose3d")


def conv3d_kernel(x, y, kernel, strides=(1, 1, 1)) -> Tensor:
    x, y = _as_tensor(x), _as_tensor(y)
    strides = _strides3(strides)
    kernel = tuple(int(n) for n in kernel)

    def vjp(g, needs):
        return (
            conv_transpose3d(y, g, strides, x.shape[1:4]) if needs[0] else None,
            conv3d(x, g, strides) if needs[1] else None,
        )

    return make_node(conv3d_kernel_np(x.data, y.data, kernel, strides), (x, y), vjp, "conv3d_kernel")

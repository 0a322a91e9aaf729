"""
Stride-1, same-padded 2D cross-correlation and its gradients.

The forward pass follows out[n, co, m, j] = bias[co] + sum_{ci, r, t} w[co, ci, r, t] * x_pad[n, ci, m + r, j + t]
without flipping the kernel. Each batch item is lowered to columns (ci-major, then r, then t) and contracted with the
kernel on its own, so items can be spread over workers without changing a single bit of the result.
"""
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from selfonn.exceptions import InvalidArgument
from selfonn.tensor import Tensor4, as_tensor4, check_finite
from selfonn.tools import parallel_map


@dataclass
class ConvKernel:
    """
    Weights and bias of one convolution.

    Args:
        weights: array of shape (Cout, Cin, K, K) with odd K
        bias: array of shape (Cout,)
    """
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.weights.ndim != 4 or self.weights.shape[2] != self.weights.shape[3]:
            raise InvalidArgument(f'Expected weights shaped (Cout, Cin, K, K), got {self.weights.shape}')
        if self.kernel_size % 2 == 0:
            raise InvalidArgument(f'Kernel size must be odd, got {self.kernel_size}')
        if self.bias.shape != (self.out_channels,):
            raise InvalidArgument(f'Expected bias shaped ({self.out_channels},), got {self.bias.shape}')

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.weights.shape[2]


def same_padding(kernel_size: int) -> int:
    """Zero padding that keeps the spatial size for an odd kernel."""
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise InvalidArgument(f'Kernel size must be odd, got {kernel_size}')
    return (kernel_size - 1) // 2


def _check_padding(kernel_size: int, pad: int):
    if pad != same_padding(kernel_size):
        raise InvalidArgument(f'Padding {pad} does not preserve size for a {kernel_size}x{kernel_size} kernel')


def _columns(sample: np.ndarray, kernel_size: int, pad: int) -> np.ndarray:
    """Window view of one zero-padded (C, H, W) sample, shaped (C, H, W, K, K)."""
    padded = np.pad(sample, ((0, 0), (pad, pad), (pad, pad)))
    return sliding_window_view(padded, (kernel_size, kernel_size), axis=(1, 2))


def correlate(x: Tensor4, weights: np.ndarray, pad: int) -> Tensor4:
    """Bias-free forward pass shared by the plain and the generative layer."""
    n, _, h, w = x.shape
    k = weights.shape[2]

    def item(sample: np.ndarray) -> np.ndarray:
        return np.tensordot(weights, _columns(sample, k, pad), axes=([1, 2, 3], [0, 3, 4]))

    if n == 0:
        return np.zeros((0, weights.shape[0], h, w), dtype=np.result_type(x, weights))
    return np.stack(parallel_map(item, x))


def conv2d_forward(x: Tensor4, k: ConvKernel, pad: int) -> Tensor4:
    """
    Same-padded cross-correlation of a batch with a kernel.

    Args:
        x: input of shape (N, Cin, H, W)
        k: kernel with matching Cin
        pad: (K - 1) / 2

    Returns:
        output of shape (N, Cout, H, W)
    """
    x = as_tensor4(x)
    if x.shape[1] != k.in_channels:
        raise InvalidArgument(f'Input has {x.shape[1]} channels, kernel expects {k.in_channels}')
    _check_padding(k.kernel_size, pad)

    out = correlate(x, k.weights, pad) + k.bias[None, :, None, None]
    check_finite(out, 'convolution output')
    return out


def conv2d_grad_wb(x: Tensor4, gy: Tensor4, kernel_size: int, pad: int) -> tuple[np.ndarray, np.ndarray]:
    """
    Gradients of sum(conv2d_forward(x) * gy) with respect to the weights and the bias.

    Args:
        x: forward input of shape (N, Cin, H, W)
        gy: upstream gradient of shape (N, Cout, H, W)
        kernel_size: K
        pad: (K - 1) / 2

    Returns:
        weight gradient of shape (Cout, Cin, K, K)
        bias gradient of shape (Cout,)
    """
    x = as_tensor4(x)
    gy = as_tensor4(gy)
    if x.shape[0] != gy.shape[0] or x.shape[2:] != gy.shape[2:]:
        raise InvalidArgument(f'Input {x.shape} and upstream gradient {gy.shape} disagree on batch or size')
    _check_padding(kernel_size, pad)

    def item(pair: tuple[np.ndarray, np.ndarray]) -> np.ndarray:
        sample, g = pair
        return np.tensordot(g, _columns(sample, kernel_size, pad), axes=([1, 2], [1, 2]))

    dtype = np.result_type(x, gy)
    grad_w = np.zeros((gy.shape[1], x.shape[1], kernel_size, kernel_size), dtype=dtype)
    # summed in batch order so the result does not depend on the worker count
    for partial in parallel_map(item, zip(x, gy)):
        grad_w += partial

    grad_b = gy.sum(axis=(0, 2, 3))
    return grad_w, grad_b


def conv2d_grad_x(k: ConvKernel, gy: Tensor4, pad: int) -> Tensor4:
    """
    Gradient of sum(conv2d_forward(x) * gy) with respect to x, the adjoint of the bias-free forward pass.

    Args:
        k: forward kernel
        gy: upstream gradient of shape (N, Cout, H, W)
        pad: (K - 1) / 2

    Returns:
        input gradient of shape (N, Cin, H, W)
    """
    gy = as_tensor4(gy)
    if gy.shape[1] != k.out_channels:
        raise InvalidArgument(f'Upstream gradient has {gy.shape[1]} channels, kernel produces {k.out_channels}')
    _check_padding(k.kernel_size, pad)

    n, _, h, w = gy.shape
    size = k.kernel_size

    def item(g: np.ndarray) -> np.ndarray:
        padded = np.zeros((k.in_channels, h + 2 * pad, w + 2 * pad), dtype=np.result_type(g, k.weights))
        for r in range(size):
            for t in range(size):
                padded[:, r:r + h, t:t + w] += np.tensordot(k.weights[:, :, r, t], g, axes=([0], [0]))
        return padded[:, pad:pad + h, pad:pad + w]

    if n == 0:
        return np.zeros((0, k.in_channels, h, w), dtype=np.result_type(gy, k.weights))
    return np.stack(parallel_map(item, gy))

"""
Dense (batch, channels, height, width) float tensors and the elementwise primitives the layers are built from.

Tensors are plain C-contiguous numpy arrays with four axes. float32 is used for training and inference; float64 is
the shadow mode used by gradient checks. Every function returns a fresh array and leaves its arguments untouched.
"""
import numpy as np

from selfonn.exceptions import InvalidArgument, NumericError
from selfonn.values import MAX_EXACT_POWER

Tensor4 = np.ndarray

DEFAULT_DTYPE = np.float32


def as_tensor4(data, dtype=None) -> Tensor4:
    """
    Validates (and if needed converts) array-like data into a contiguous 4-D float tensor.

    Args:
        data: array-like with four axes (n, c, h, w)
        dtype: optional float dtype, default keeps a float input's dtype or uses float32

    Returns:
        contiguous tensor
    """
    if dtype is None:
        dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64) \
            else DEFAULT_DTYPE
    t = np.ascontiguousarray(data, dtype=dtype)
    if t.ndim != 4:
        raise InvalidArgument(f'Expected a (n, c, h, w) tensor, got shape {t.shape}')
    return t


def check_finite(t: np.ndarray, what: str = 'tensor'):
    """Raises a NumericError if any element of t is NaN or infinite."""
    if not np.all(np.isfinite(t)):
        raise NumericError(f'{what} contains non-finite values')


def check_same_shape(x: np.ndarray, y: np.ndarray, what: str = 'tensors'):
    if x.shape != y.shape:
        raise InvalidArgument(f'Shape mismatch between {what}: {x.shape} vs {y.shape}')


def elementwise_power(t: Tensor4, q: int) -> Tensor4:
    """
    Raises every element to the integer power q.

    Args:
        t: input tensor
        q: positive power

    Returns:
        t ** q, computed by repeated multiplication for the orders a generative layer uses
    """
    if int(q) != q or q < 1:
        raise InvalidArgument(f'Unexpected power {q}, expected an integer >= 1')

    if q > MAX_EXACT_POWER:
        out = np.power(t, int(q))
    else:
        out = t.copy()
        for _ in range(int(q) - 1):
            out = out * t

    check_finite(out, f'power {q}')
    return out


def power_maps(t: Tensor4, q_order: int) -> list[Tensor4]:
    """
    Builds [t^1, ..., t^Q]. Each map equals elementwise_power(t, q) for q up to the exact-power limit.
    """
    if int(q_order) != q_order or q_order < 1:
        raise InvalidArgument(f'Unexpected q_order {q_order}, expected an integer >= 1')

    maps = [t.copy()]
    for q in range(2, int(q_order) + 1):
        maps.append(maps[-1] * t if q <= MAX_EXACT_POWER else np.power(t, q))

    check_finite(maps[-1], f'power {q_order}')
    return maps


def clip01(t: Tensor4) -> Tensor4:
    """Clamps every element into [0,1]."""
    return np.clip(t, 0, 1)


def linear_combine(a: float, x: Tensor4, b: float, y: Tensor4) -> Tensor4:
    """Returns a*x + b*y for equally shaped tensors."""
    check_same_shape(x, y, 'linear_combine operands')
    out = a * x + b * y
    check_finite(out, 'linear combination')
    return out

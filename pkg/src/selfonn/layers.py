"""
Generative-neuron layers, the two-hidden-layer denoising network and its model file format.

A generative layer of order Q computes y = bias + sum_{q=1..Q} correlate(x^q, w_q): every input map is raised to the
powers 1..Q and each power gets its own kernel. Q = 1 is exactly a convolutional layer.
"""
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Union

import numpy as np

from selfonn.classes import Activation, LayerSpec, NetworkSpec
from selfonn.conv import ConvKernel, conv2d_grad_wb, conv2d_grad_x, correlate, same_padding
from selfonn.exceptions import BadMagic, DecodeError, InvalidArgument, NetworkNameError, StaleCache, \
    TruncatedStream, UnsupportedVersion
from selfonn.tensor import DEFAULT_DTYPE, Tensor4, as_tensor4, check_finite, power_maps
from selfonn.values import HIDDEN_LAYERS, MODEL_MAGIC, MODEL_VERSION

logger = logging.getLogger(__name__)

Backward = Callable[[Tensor4], Tensor4]


@dataclass
class GenerativeConvParams:
    """
    Parameters of one generative convolution layer. The single bias belongs to the q = 1 kernel; the kernels of
    higher powers carry none.

    Args:
        weights: array of shape (Q, Cout, Cin, K, K), weights[q - 1] multiplying the q-th power map
        bias: array of shape (Cout,)
    """
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.weights.ndim != 5 or self.weights.shape[3] != self.weights.shape[4]:
            raise InvalidArgument(f'Expected weights shaped (Q, Cout, Cin, K, K), got {self.weights.shape}')
        if self.weights.shape[0] < 1:
            raise InvalidArgument('A generative layer needs at least one kernel')
        if self.bias.shape != (self.out_channels,):
            raise InvalidArgument(f'Expected bias shaped ({self.out_channels},), got {self.bias.shape}')

    @classmethod
    def from_kernels(cls, kernels: list[ConvKernel]) -> 'GenerativeConvParams':
        """Stacks Q kernels of identical shape; only the first may carry a non-zero bias."""
        if not kernels:
            raise InvalidArgument('A generative layer needs at least one kernel')
        shape = kernels[0].weights.shape
        for q, k in enumerate(kernels[1:], start=2):
            if k.weights.shape != shape:
                raise InvalidArgument(f'Kernel {q} is shaped {k.weights.shape}, kernel 1 is {shape}')
            if np.any(k.bias != 0):
                raise InvalidArgument(f'Kernel {q} carries a bias, only kernel 1 may')
        return cls(np.stack([k.weights for k in kernels]), kernels[0].bias.copy())

    @property
    def q_order(self) -> int:
        return self.weights.shape[0]

    @property
    def out_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[2]

    @property
    def kernel_size(self) -> int:
        return self.weights.shape[3]

    def kernel(self, q: int) -> ConvKernel:
        """The kernel applied to the q-th power map, 1-based."""
        if not 1 <= q <= self.q_order:
            raise InvalidArgument(f'Unexpected power {q}, layer has Q = {self.q_order}')
        bias = self.bias if q == 1 else np.zeros_like(self.bias)
        return ConvKernel(self.weights[q - 1], bias)

    @property
    def kernels(self) -> list[ConvKernel]:
        return [self.kernel(q) for q in range(1, self.q_order + 1)]


@dataclass
class GenConvCache:
    """Power maps x^1 .. x^Q kept by the forward pass for the backward pass."""
    powers: list[Tensor4]


@dataclass
class GenConvGrads:
    """Gradients of one generative layer, shaped like its parameters."""
    weights: np.ndarray
    bias: np.ndarray


#
# Layer Operations
#

def gen_conv_forward(x: Tensor4, p: GenerativeConvParams, pad: int) -> tuple[Tensor4, GenConvCache]:
    """
    Forward pass of a generative convolution layer.

    Args:
        x: input of shape (N, Cin, H, W)
        p: layer parameters
        pad: (K - 1) / 2

    Returns:
        output of shape (N, Cout, H, W)
        cache holding the power maps
    """
    x = as_tensor4(x)
    if x.shape[1] != p.in_channels:
        raise InvalidArgument(f'Input has {x.shape[1]} channels, layer expects {p.in_channels}')
    if pad != same_padding(p.kernel_size):
        raise InvalidArgument(f'Padding {pad} does not preserve size for a {p.kernel_size}x{p.kernel_size} kernel')

    powers = power_maps(x, p.q_order)
    y = correlate(powers[0], p.weights[0], pad)
    for q in range(2, p.q_order + 1):
        y = y + correlate(powers[q - 1], p.weights[q - 1], pad)
    y = y + p.bias[None, :, None, None]

    check_finite(y, 'generative layer output')
    return y, GenConvCache(powers)


def gen_conv_backward(cache: GenConvCache, p: GenerativeConvParams, gy: Tensor4,
                      pad: int) -> tuple[GenConvGrads, Tensor4]:
    """
    Backward pass of a generative convolution layer. The input gradient chains through each power map:
    gx = sum_q conv2d_grad_x(w_q, gy) * q * x^(q - 1).

    Args:
        cache: cache of the matching forward pass
        p: layer parameters used by that forward pass
        gy: upstream gradient of shape (N, Cout, H, W)
        pad: (K - 1) / 2

    Returns:
        parameter gradients
        input gradient of shape (N, Cin, H, W)
    """
    if len(cache.powers) != p.q_order:
        raise InvalidArgument(f'Cache holds {len(cache.powers)} power maps, layer has Q = {p.q_order}')

    size = p.kernel_size
    grad_w = np.empty_like(p.weights, dtype=np.result_type(p.weights, gy))
    grad_b = None
    gx = None
    for q, kernel in enumerate(p.kernels, start=1):
        grad_w[q - 1], bias_part = conv2d_grad_wb(cache.powers[q - 1], gy, size, pad)
        term = conv2d_grad_x(kernel, gy, pad)
        if q == 1:
            grad_b = bias_part
            gx = term
        else:
            gx = gx + term * (q * cache.powers[q - 2])

    check_finite(gx, 'generative layer input gradient')
    return GenConvGrads(grad_w, grad_b), gx


def tanh_activation(x: Tensor4) -> tuple[Tensor4, Backward]:
    """
    Hyperbolic tangent.

    Returns:
        tanh(x)
        backward function mapping gy to gy * (1 - tanh(x)^2)
    """
    y = np.tanh(x)

    def backward(gy: Tensor4) -> Tensor4:
        return gy * (1 - y * y)

    return y, backward


def linear_activation(x: Tensor4) -> tuple[Tensor4, Backward]:
    return x, lambda gy: gy


ACTIVATIONS: dict[Activation, Callable[[Tensor4], tuple[Tensor4, Backward]]] = {
    Activation.LINEAR: linear_activation,
    Activation.TANH: tanh_activation,
}


#
# Network
#

def init_layer(spec: LayerSpec, rng: np.random.Generator, dtype=DEFAULT_DTYPE) -> GenerativeConvParams:
    """
    Draws every q-slice uniformly from [-b, b] with b = sqrt(6 / (fan_in + fan_out)), fan_in = Cin * K^2 and
    fan_out = Cout * K^2. Biases start at zero.
    """
    area = spec.kernel_size ** 2
    bound = np.sqrt(6.0 / (spec.in_channels * area + spec.out_channels * area))
    shape = (spec.q_order, spec.out_channels, spec.in_channels, spec.kernel_size, spec.kernel_size)
    weights = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return GenerativeConvParams(weights, np.zeros(spec.out_channels, dtype=dtype))


class Network:
    """A stack of generative layers with their parameters."""

    def __init__(self, spec: NetworkSpec, params: list[GenerativeConvParams]):
        """
        Args:
            spec: architecture
            params: one parameter set per layer, shaped as its layer spec says
        """
        if len(params) != len(spec.layers):
            raise InvalidArgument(f'{len(params)} parameter sets given for {len(spec.layers)} layers')
        for i, (layer, p) in enumerate(zip(spec.layers, params)):
            expected = (layer.q_order, layer.out_channels, layer.in_channels, layer.kernel_size, layer.kernel_size)
            if p.weights.shape != expected:
                raise InvalidArgument(f'Layer {i} weights are shaped {p.weights.shape}, expected {expected}')

        self.spec = spec
        self.params = params
        self.generation = 0

    @property
    def name(self) -> str:
        return self.spec.name

    @property
    def channels(self) -> int:
        return self.spec.channels

    @property
    def dtype(self) -> np.dtype:
        return self.params[0].weights.dtype

    def parameters(self) -> list[np.ndarray]:
        """Flat parameter list: weights then bias of every layer, in layer order."""
        arrays = []
        for p in self.params:
            arrays += [p.weights, p.bias]
        return arrays

    def set_parameters(self, arrays: list[np.ndarray]):
        """Replaces every parameter, invalidating caches of earlier forward passes."""
        current = self.parameters()
        if len(arrays) != len(current):
            raise InvalidArgument(f'{len(arrays)} arrays given for {len(current)} parameters')
        for new, old in zip(arrays, current):
            if new.shape != old.shape:
                raise InvalidArgument(f'Parameter shaped {new.shape} given for {old.shape}')

        self.params = [GenerativeConvParams(np.array(w, dtype=self.dtype), np.array(b, dtype=self.dtype))
                       for w, b in zip(arrays[::2], arrays[1::2])]
        self.generation += 1

    def copy(self) -> 'Network':
        return self.astype(self.dtype)

    def astype(self, dtype) -> 'Network':
        """Copy with every parameter cast to dtype, float64 being the gradient checking mode."""
        return Network(self.spec, [GenerativeConvParams(p.weights.astype(dtype), p.bias.astype(dtype))
                                   for p in self.params])

    def parameter_count(self) -> int:
        return sum(a.size for a in self.parameters())

    def forward(self, x: Tensor4) -> tuple[Tensor4, 'NetworkCache']:
        return network_forward(self, x)

    def __str__(self) -> str:
        orders = sorted({l.q_order for l in self.spec.layers})
        return f'{self.name}: {self.channels} channel(s), Q={"/".join(map(str, orders))}, ' \
               f'{self.parameter_count()} parameters'


@dataclass
class NetworkCache:
    """Per-layer state of one network forward pass."""
    owner: Network
    generation: int
    layers: list[GenConvCache] = field(default_factory=list)
    activations: list[Backward] = field(default_factory=list)


def parse_network_name(name: str) -> tuple[int, int]:
    """
    Parses CNN-X and Self-ONN-Q-X architecture names.

    Args:
        name: architecture name

    Returns:
        polynomial order Q (1 for CNN)
        hidden width X
    """
    def number(token: str, what: str) -> int:
        # '0' and zero-padded numbers are rejected
        if not token.isdigit() or not token.isascii() or token.startswith('0'):
            raise NetworkNameError(f'Token {token!r} in {name!r} is not a valid {what}')
        return int(token)

    tokens = name.split('-')
    if tokens[0] == 'CNN':
        if len(tokens) != 2:
            raise NetworkNameError(f'Unexpected token {tokens[-1]!r} in {name!r}, expected CNN-<X>')
        return 1, number(tokens[1], 'width X')

    if tokens[:2] == ['Self', 'ONN']:
        if len(tokens) == 3:
            raise NetworkNameError(f'Missing order Q before {tokens[2]!r} in {name!r}, expected Self-ONN-<Q>-<X>')
        if len(tokens) != 4:
            raise NetworkNameError(f'Unexpected token {tokens[-1]!r} in {name!r}, expected Self-ONN-<Q>-<X>')
        q_order = number(tokens[2], 'order Q')
        if q_order < 2:
            raise NetworkNameError(f'Order token {tokens[2]!r} in {name!r} must be >= 2, use CNN-<X> for Q = 1')
        return q_order, number(tokens[3], 'width X')

    raise NetworkNameError(f'Unknown architecture family {tokens[0]!r} in {name!r}, expected CNN or Self-ONN')


def standard_spec(channels: int, width: int, q_order: int) -> NetworkSpec:
    """HIDDEN_LAYERS tanh layers of the given width and a linear output layer, all of order Q."""
    hidden = [LayerSpec(channels if i == 0 else width, width, q_order, Activation.TANH) for i in range(HIDDEN_LAYERS)]
    return NetworkSpec(channels, (*hidden, LayerSpec(width, channels, q_order, Activation.LINEAR)))


def init_network(spec: NetworkSpec, seed: int, dtype=DEFAULT_DTYPE) -> Network:
    rng = np.random.default_rng(seed)
    return Network(spec, [init_layer(layer, rng, dtype) for layer in spec.layers])


def build_network(name: str, channels: int = 1, seed: int = 0, dtype=DEFAULT_DTYPE) -> Network:
    """
    Builds a freshly initialized network from its architecture name.

    Args:
        name: CNN-X or Self-ONN-Q-X
        channels: image channels, 1 for grayscale or 3 for color
        seed: initialization seed
        dtype: parameter precision

    Returns:
        network whose spec renders back to the given name
    """
    q_order, width = parse_network_name(name)
    if channels not in (1, 3):
        raise InvalidArgument(f'Unexpected channel count {channels}, expected 1 or 3')
    return init_network(standard_spec(channels, width, q_order), seed, dtype)


def network_forward(net: Network, x: Tensor4) -> tuple[Tensor4, NetworkCache]:
    """
    Runs every layer and its activation.

    Args:
        net: network
        x: input of shape (N, C, H, W)

    Returns:
        output of the same shape
        caches for network_backward
    """
    x = as_tensor4(x)
    if x.shape[1] != net.channels:
        raise InvalidArgument(f'Input has {x.shape[1]} channels, network expects {net.channels}')

    cache = NetworkCache(net, net.generation)
    for layer, p in zip(net.spec.layers, net.params):
        x, layer_cache = gen_conv_forward(x, p, layer.padding)
        x, backward = ACTIVATIONS[layer.activation](x)
        cache.layers.append(layer_cache)
        cache.activations.append(backward)

    return x, cache


def network_backward(net: Network, cache: NetworkCache, gy: Tensor4) -> list[np.ndarray]:
    """
    Backpropagates an output gradient through the network.

    Args:
        net: network the cache was produced by
        cache: cache of the matching forward pass
        gy: gradient with respect to the network output

    Returns:
        gradients aligned with net.parameters()
    """
    if cache.owner is not net or cache.generation != net.generation:
        raise StaleCache('Cache does not belong to the current parameters of this network')

    grads: list[np.ndarray] = []
    for layer, p, layer_cache, backward in reversed(list(zip(net.spec.layers, net.params, cache.layers,
                                                             cache.activations))):
        layer_grads, gy = gen_conv_backward(layer_cache, p, backward(gy), layer.padding)
        grads = [layer_grads.weights, layer_grads.bias] + grads

    return grads


#
# Model Files
#

_HEADER = struct.Struct('<4sHHH')
_LAYER = struct.Struct('<HHHHB')


def serialize_model(net: Network) -> bytes:
    """
    Encodes a network: magic, version, channels and layer count, one shape record per layer, then per layer the
    little-endian float32 weights of q = 1 .. Q in [out][in][kh][kw] order with the bias right after q = 1.
    """
    out = bytearray(_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, net.channels, len(net.spec.layers)))
    for layer in net.spec.layers:
        out += _LAYER.pack(layer.in_channels, layer.out_channels, layer.kernel_size, layer.q_order,
                           layer.activation.value)

    for p in net.params:
        for q in range(p.q_order):
            out += p.weights[q].astype('<f4').tobytes()
            if q == 0:
                out += p.bias.astype('<f4').tobytes()

    return bytes(out)


class _Reader:
    """Cursor over a byte stream that reports truncation instead of short reads."""

    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise TruncatedStream(f'Model stream ends at byte {len(self.data)}, needed {self.offset + size}')
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def floats(self, shape: tuple[int, ...]) -> np.ndarray:
        count = int(np.prod(shape))
        return np.frombuffer(self.take(4 * count), dtype='<f4').astype(np.float32).reshape(shape)


def deserialize_model(data: bytes) -> Network:
    """Decodes a network written by serialize_model. Parameters come back as float32."""
    reader = _Reader(bytes(data))
    if len(data) >= len(MODEL_MAGIC) and bytes(data[:len(MODEL_MAGIC)]) != MODEL_MAGIC:
        raise BadMagic(f'Not a model file, magic {bytes(data[:len(MODEL_MAGIC)])!r}')

    _, version, channels, layer_count = _HEADER.unpack(reader.take(_HEADER.size))
    if version != MODEL_VERSION:
        raise UnsupportedVersion(f'Model file version {version}, expected {MODEL_VERSION}')

    layers = []
    for _ in range(layer_count):
        in_ch, out_ch, size, q_order, code = _LAYER.unpack(reader.take(_LAYER.size))
        try:
            layers.append(LayerSpec(in_ch, out_ch, q_order, Activation(code), size))
        except (ValueError, InvalidArgument) as e:
            raise DecodeError(f'Invalid layer record: {e}')

    try:
        spec = NetworkSpec(channels, tuple(layers))
    except InvalidArgument as e:
        raise DecodeError(f'Invalid network record: {e}')

    params = []
    for layer in spec.layers:
        shape = (layer.out_channels, layer.in_channels, layer.kernel_size, layer.kernel_size)
        weights = [reader.floats(shape)]
        bias = reader.floats((layer.out_channels,))
        weights += [reader.floats(shape) for _ in range(layer.q_order - 1)]
        params.append(GenerativeConvParams(np.stack(weights), bias))

    if reader.offset != len(reader.data):
        raise DecodeError(f'{len(reader.data) - reader.offset} unexpected trailing bytes in model stream')

    return Network(spec, params)


def save_model(net: Network, path: Union[str, Path]):
    Path(path).write_bytes(serialize_model(net))
    logger.info('Saved %s to %s', net.name, path)


def load_model(path: Union[str, Path]) -> Network:
    return deserialize_model(Path(path).read_bytes())

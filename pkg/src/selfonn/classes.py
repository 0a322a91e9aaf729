"""Contains record classes shared between the layer, data, training and evaluation modules."""
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from selfonn.exceptions import InvalidArgument
from selfonn.values import KERNEL_SIZE, PIXEL_MAX


class Activation(Enum):
    """Enumeration of layer activations, valued by their model file code."""
    LINEAR = 0
    TANH = 1


@dataclass(frozen=True)
class LayerSpec:
    """
    Shape of one generative convolution layer.

    Args:
        in_channels: number of input feature maps
        out_channels: number of output feature maps (neurons)
        q_order: polynomial order Q, 1 for a convolutional layer
        activation: activation applied to the layer output
        kernel_size: odd kernel size, 3 for every network in the study
    """
    in_channels: int
    out_channels: int
    q_order: int = 1
    activation: Activation = Activation.TANH
    kernel_size: int = KERNEL_SIZE

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise InvalidArgument(f'Channel counts must be positive, got {self.in_channels} -> {self.out_channels}')
        if self.q_order < 1:
            raise InvalidArgument(f'Unexpected q_order {self.q_order}, expected >= 1')
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise InvalidArgument(f'Unexpected kernel size {self.kernel_size}, expected a positive odd number')

    @property
    def padding(self) -> int:
        return (self.kernel_size - 1) // 2

    def __str__(self) -> str:
        return f'{self.in_channels}->{self.out_channels} Q={self.q_order} {self.activation.name.lower()}'


@dataclass(frozen=True)
class NetworkSpec:
    """
    Architecture of a denoising network: an ordered stack of layers mapping C channels back to C channels.

    Args:
        channels: image channel count, 1 for grayscale or 3 for color
        layers: ordered layer shapes, the first consuming and the last producing `channels` maps
    """
    channels: int
    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        if not self.layers:
            raise InvalidArgument('A network needs at least one layer')
        if self.layers[0].in_channels != self.channels or self.layers[-1].out_channels != self.channels:
            raise InvalidArgument(f'Network must map {self.channels} channels to {self.channels} channels')
        for prev, layer in zip(self.layers, self.layers[1:]):
            if prev.out_channels != layer.in_channels:
                raise InvalidArgument(f'Layer {layer} does not consume the {prev.out_channels} maps before it')

    @property
    def width(self) -> Optional[int]:
        """Hidden width X of a standard network, None for any other stack."""
        hidden = {l.out_channels for l in self.layers[:-1]}
        return hidden.pop() if len(hidden) == 1 else None

    @property
    def q_order(self) -> Optional[int]:
        """Q shared by every layer, None when layers differ."""
        orders = {l.q_order for l in self.layers}
        return orders.pop() if len(orders) == 1 else None

    def is_standard_architecture(self) -> bool:
        """Whether this is a two-hidden-layer tanh/tanh/linear network with a single width and Q."""
        activations = [l.activation for l in self.layers]
        return len(self.layers) == 3 and self.width is not None and self.q_order is not None and \
            activations == [Activation.TANH, Activation.TANH, Activation.LINEAR]

    @property
    def name(self) -> str:
        """Rendered architecture name, CNN-X or Self-ONN-Q-X for standard networks."""
        if self.is_standard_architecture():
            if self.q_order == 1:
                return f'CNN-{self.width}'
            return f'Self-ONN-{self.q_order}-{self.width}'

        return 'custom[' + ', '.join(str(l) for l in self.layers) + ']'


@dataclass(frozen=True)
class NoiseConfig:
    """
    Additive white Gaussian noise settings.

    Args:
        sigma255: noise standard deviation on the 0 - 255 scale, canonical values 30, 60 and 90
        seed: base seed of every noise stream drawn with this config
    """
    sigma255: float
    seed: int = 0

    def __post_init__(self):
        if not self.sigma255 >= 0:
            raise InvalidArgument(f'Unexpected sigma {self.sigma255}, expected >= 0')

    @property
    def sigma(self) -> float:
        """Standard deviation in the normalized [0,1] pixel domain."""
        return self.sigma255 / PIXEL_MAX


class Image:
    """Channel-planar image with pixels in [0,1]."""

    def __init__(self, pixels: np.ndarray, name: str = ''):
        """
        Args:
            pixels: array of shape (channels, height, width) with values in [0,1]
            name: optional identifier, usually the file stem
        """
        pixels = np.asarray(pixels)
        if pixels.ndim != 3 or pixels.shape[0] not in (1, 3):
            raise InvalidArgument(f'Expected pixels shaped (1 or 3, H, W), got {pixels.shape}')
        if pixels.shape[1] < 1 or pixels.shape[2] < 1:
            raise InvalidArgument(f'Image {name!r} is empty')
        if not np.all(np.isfinite(pixels)) or pixels.min() < 0 or pixels.max() > 1:
            raise InvalidArgument(f'Image {name!r} has pixels outside [0,1]')

        self.pixels = pixels
        self.name = name

    @property
    def channels(self) -> int:
        return self.pixels.shape[0]

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]

    def __str__(self) -> str:
        return f'{self.name or "image"} {self.width}x{self.height}x{self.channels}'


class PatchSet:
    """Clean square training patches and where each one was cut from."""

    def __init__(self, patches: np.ndarray, sources: list[tuple[int, int, int]]):
        """
        Args:
            patches: array of shape (count, channels, patch_size, patch_size)
            sources: per patch (image index, top row, left column)
        """
        if patches.ndim != 4 or patches.shape[2] != patches.shape[3]:
            raise InvalidArgument(f'Expected square patches shaped (N, C, P, P), got {patches.shape}')
        if len(sources) != patches.shape[0]:
            raise InvalidArgument(f'{len(sources)} sources given for {patches.shape[0]} patches')

        self.patches = patches
        self.sources = sources

    @property
    def patch_size(self) -> int:
        return self.patches.shape[2]

    @property
    def channels(self) -> int:
        return self.patches.shape[1]

    def subset(self, indices) -> 'PatchSet':
        """Selects patches by index, keeping their order and provenance."""
        indices = np.asarray(indices, dtype=np.int64)
        return PatchSet(self.patches[indices], [self.sources[i] for i in indices])

    def __len__(self) -> int:
        return self.patches.shape[0]

    def __str__(self) -> str:
        return f'{len(self)} patches of {self.patch_size}x{self.patch_size}x{self.channels}'

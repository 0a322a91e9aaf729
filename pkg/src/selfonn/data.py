"""
Image I/O, AWGN corruption, patch extraction and train/validation splitting.

Images are read from and written to netpbm files (P2/P5 grayscale, P3/P6 color, maxval 255). Every random draw comes
from a Philox stream keyed by the seed and a stable item index, so results are the same whatever the iteration order
or worker count.
"""
import logging
import math
from pathlib import Path
from typing import Union

import numpy as np

from selfonn.classes import Image, NoiseConfig, PatchSet
from selfonn.exceptions import BadMagic, DecodeError, InvalidArgument, TruncatedStream, UnsupportedDepth
from selfonn.tensor import clip01
from selfonn.tools import parallel_map, random_stream
from selfonn.values import IMAGE_SUFFIXES, PIXEL_MAX

logger = logging.getLogger(__name__)

# magic -> (channels, binary)
NETPBM_FORMATS = {
    b'P2': (1, False),
    b'P3': (3, False),
    b'P5': (1, True),
    b'P6': (3, True),
}

_PATCH_STREAM = 11
_SPLIT_STREAM = 12
_SYNTHETIC_STREAM = 13


#
# Image Files
#

def _header_fields(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Reads whitespace separated header tokens after the magic, skipping # comments."""
    fields = []
    pos = 2
    while len(fields) < count:
        while pos < len(data) and (data[pos:pos + 1].isspace() or data[pos:pos + 1] == b'#'):
            if data[pos:pos + 1] == b'#':
                end = data.find(b'\n', pos)
                pos = len(data) if end < 0 else end
            else:
                pos += 1

        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b'#':
            pos += 1
        if start == pos:
            raise TruncatedStream(f'Image header ends after {len(fields)} of {count} fields')
        fields.append(data[start:pos])

    return fields, pos


def decode_netpbm(data: bytes, name: str = '') -> Image:
    """
    Decodes an 8-bit PGM or PPM image.

    Args:
        data: file contents
        name: identifier used in errors and kept on the image

    Returns:
        image with pixels scaled to [0,1]
    """
    magic = data[:2]
    if magic not in NETPBM_FORMATS:
        raise BadMagic(f'Unknown image magic {magic!r} in {name or "image"}, expected P2, P3, P5 or P6')
    channels, binary = NETPBM_FORMATS[magic]

    fields, pos = _header_fields(data, 3)
    try:
        width, height, maxval = (int(f) for f in fields)
    except ValueError:
        raise DecodeError(f'Malformed header {fields!r} in {name or "image"}')
    if width < 1 or height < 1:
        raise DecodeError(f'Invalid size {width}x{height} in {name or "image"}')
    if maxval != PIXEL_MAX:
        raise UnsupportedDepth(f'Unsupported maxval {maxval} in {name or "image"}, expected {PIXEL_MAX}')

    count = width * height * channels
    if binary:
        # exactly one whitespace byte separates maxval from the raster
        payload = data[pos + 1:pos + 1 + count]
        if len(payload) < count:
            raise TruncatedStream(f'{name or "image"} holds {len(payload)} of {count} pixel bytes')
        values = np.frombuffer(payload, dtype=np.uint8)
    else:
        # comments may also appear between raster values
        tokens = [t for line in data[pos:].split(b'\n') for t in line.split(b'#', 1)[0].split()]
        if len(tokens) < count:
            raise TruncatedStream(f'{name or "image"} holds {len(tokens)} of {count} pixel values')
        try:
            values = np.array([int(t) for t in tokens[:count]], dtype=np.int64)
        except ValueError:
            raise DecodeError(f'Non-numeric pixel value in {name or "image"}')
        if values.min() < 0 or values.max() > PIXEL_MAX:
            raise DecodeError(f'Pixel value outside 0 - {PIXEL_MAX} in {name or "image"}')

    pixels = values.reshape(height, width, channels).transpose(2, 0, 1).astype(np.float32) / np.float32(PIXEL_MAX)
    return Image(np.ascontiguousarray(pixels), name)


def to_bytes(img: Image) -> np.ndarray:
    """Quantizes [0,1] pixels to 8-bit (round half up after clipping), shaped (H, W, C)."""
    scaled = np.floor(clip01(img.pixels).astype(np.float64) * PIXEL_MAX + 0.5)
    return scaled.astype(np.uint8).transpose(1, 2, 0)


def encode_netpbm(img: Image, ascii: bool = False) -> bytes:
    """Encodes an image as PGM (one channel) or PPM (three channels)."""
    raster = to_bytes(img)
    if ascii:
        magic = 'P2' if img.channels == 1 else 'P3'
        rows = [' '.join(str(v) for v in row.ravel()) for row in raster]
        return f'{magic}\n{img.width} {img.height}\n{PIXEL_MAX}\n'.encode('ascii') + \
            '\n'.join(rows).encode('ascii') + b'\n'

    magic = 'P5' if img.channels == 1 else 'P6'
    return f'{magic}\n{img.width} {img.height}\n{PIXEL_MAX}\n'.encode('ascii') + raster.tobytes()


def load_image(path: Union[str, Path]) -> Image:
    path = Path(path)
    return decode_netpbm(path.read_bytes(), path.stem)


def save_image(img: Image, path: Union[str, Path], ascii: bool = False):
    Path(path).write_bytes(encode_netpbm(img, ascii))


def image_paths(directory: Union[str, Path]) -> list[Path]:
    """Sorted netpbm files directly inside a directory."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f'Image directory {directory} does not exist')
    return sorted(p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def load_images(directory: Union[str, Path]) -> list[Image]:
    """
    Loads every PGM / PPM file in a directory, in file name order.

    Args:
        directory: folder of .pgm / .ppm files

    Returns:
        decoded images
    """
    paths = image_paths(directory)
    if not paths:
        raise InvalidArgument(f'No .pgm or .ppm images in {directory}')

    images = parallel_map(load_image, paths)
    logger.info('Loaded %d images from %s', len(images), directory)
    return images


#
# Noise
#

def awgn_noise(shape: tuple[int, ...], cfg: NoiseConfig, *key: int) -> np.ndarray:
    """
    Zero-mean Gaussian noise with standard deviation sigma255 / 255, before any clipping.

    Args:
        shape: noise array shape
        cfg: noise level and seed
        key: stable item indices selecting the random stream

    Returns:
        float64 noise
    """
    return random_stream(cfg.seed, *key).standard_normal(shape) * cfg.sigma


def corrupt(clean: np.ndarray, cfg: NoiseConfig, *key: int) -> np.ndarray:
    """Adds keyed AWGN to a pixel array and clips the result into [0,1]. Keeps the input dtype."""
    if cfg.sigma255 == 0:
        return clean.copy()
    return clip01(clean + awgn_noise(clean.shape, cfg, *key)).astype(clean.dtype)


def add_awgn(img: Image, cfg: NoiseConfig, key: tuple[int, ...] = ()) -> Image:
    """
    Corrupts an image with additive white Gaussian noise and clips it back into [0,1].

    Args:
        img: clean image
        cfg: noise level and seed
        key: stable item indices (image or patch index) selecting the noise stream

    Returns:
        noisy image, identical to the input when sigma is 0
    """
    return Image(corrupt(img.pixels, cfg, *key), img.name)


def corrupt_batch(clean: np.ndarray, cfg: NoiseConfig, keys: list[tuple[int, ...]]) -> np.ndarray:
    """Corrupts a (N, C, H, W) batch, one keyed stream per item."""
    if len(keys) != clean.shape[0]:
        raise InvalidArgument(f'{len(keys)} noise keys given for {clean.shape[0]} items')
    if clean.shape[0] == 0:
        return clean.copy()
    return np.stack(parallel_map(lambda item: corrupt(item[0], cfg, *item[1]), zip(clean, keys)))


#
# Patches
#

def sample_patch_corners(shapes: list[tuple[int, int]], patch_size: int, count: int,
                         seed: int) -> list[tuple[int, int, int]]:
    """
    Draws (image index, top, left) triples: a uniformly random image, then a uniformly random valid corner in it.

    Args:
        shapes: (height, width) of every image
        patch_size: square patch side
        count: number of draws
        seed: sampling seed

    Returns:
        corner triples, duplicates allowed
    """
    if count < 1:
        raise InvalidArgument(f'Unexpected patch count {count}, expected >= 1')
    if patch_size < 1:
        raise InvalidArgument(f'Unexpected patch size {patch_size}, expected >= 1')
    if not shapes:
        raise InvalidArgument('No images to extract patches from')

    heights = np.array([s[0] for s in shapes], dtype=np.int64)
    widths = np.array([s[1] for s in shapes], dtype=np.int64)
    rng = random_stream(seed, _PATCH_STREAM)
    indices = rng.integers(0, len(shapes), size=count)
    tops = rng.integers(0, heights[indices] - patch_size + 1)
    lefts = rng.integers(0, widths[indices] - patch_size + 1)
    return [(int(i), int(t), int(l)) for i, t, l in zip(indices, tops, lefts)]


def extract_patches(images: list[Image], patch_size: int, count: int, seed: int) -> PatchSet:
    """
    Cuts random square patches out of a list of images.

    Args:
        images: source images, all with the same channel count
        patch_size: square patch side
        count: number of patches
        seed: sampling seed

    Returns:
        patches with their source image index and top-left corner
    """
    for i, img in enumerate(images):
        if img.height < patch_size or img.width < patch_size:
            raise InvalidArgument(f'Image {img.name or i} is {img.width}x{img.height}, smaller than a '
                                  f'{patch_size}x{patch_size} patch')
        if img.channels != images[0].channels:
            raise InvalidArgument(f'Image {img.name or i} has {img.channels} channels, expected '
                                  f'{images[0].channels}')

    sources = sample_patch_corners([(img.height, img.width) for img in images], patch_size, count, seed)
    patches = np.stack([images[i].pixels[:, t:t + patch_size, l:l + patch_size] for i, t, l in sources])
    return PatchSet(patches, sources)


def split_train_val(p: PatchSet, ratio: float, seed: int) -> tuple[PatchSet, PatchSet]:
    """
    Shuffles patches and splits them, the first ceil(ratio * n) going to training.

    Args:
        p: patches to split
        ratio: training share, strictly between 0 and 1
        seed: shuffling seed

    Returns:
        training patches
        validation patches
    """
    if not 0 < ratio < 1:
        raise InvalidArgument(f'Unexpected split ratio {ratio}, expected 0 < ratio < 1')
    if len(p) == 0:
        raise InvalidArgument('Cannot split an empty patch set')

    order = random_stream(seed, _SPLIT_STREAM).permutation(len(p))
    # rounding first keeps 0.95 * 100 at 95 despite binary representation
    cut = math.ceil(round(ratio * len(p), 9))
    return p.subset(order[:cut]), p.subset(order[cut:])


#
# Synthetic Data
#

def synthetic_images(count: int, height: int, width: int, channels: int = 1, seed: int = 0) -> list[Image]:
    """
    Generates piecewise smooth test images: a few random low-frequency cosines plus a random step edge, scaled into
    [0.05, 0.95]. Used when no natural image set is at hand.
    """
    if channels not in (1, 3):
        raise InvalidArgument(f'Unexpected channel count {channels}, expected 1 or 3')

    yy, xx = np.mgrid[0:height, 0:width] / max(height, width)
    images = []
    for i in range(count):
        rng = random_stream(seed, _SYNTHETIC_STREAM, i)
        planes = []
        for _ in range(channels):
            plane = np.zeros((height, width))
            for _ in range(4):
                fy, fx = rng.uniform(0, 3, size=2)
                plane += rng.uniform(0.2, 1) * np.cos(2 * np.pi * (fy * yy + fx * xx) + rng.uniform(0, 2 * np.pi))
            angle = rng.uniform(0, np.pi)
            plane += rng.uniform(0.5, 1.5) * (np.cos(angle) * xx + np.sin(angle) * yy > rng.uniform(0.2, 0.8))
            planes.append(plane)

        stack = np.stack(planes)
        stack = (stack - stack.min()) / max(stack.max() - stack.min(), 1e-12)
        images.append(Image((0.05 + 0.9 * stack).astype(np.float32), f'synthetic-{i:03d}'))

    return images

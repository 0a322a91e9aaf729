"""Contains the L2 loss, the Adam optimizer and the epoch loop with best-validation model selection."""
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from selfonn.classes import NoiseConfig, PatchSet
from selfonn.data import corrupt_batch, split_train_val
from selfonn.evaluate import psnr
from selfonn.exceptions import InvalidArgument, NumericError
from selfonn.layers import Network, network_backward, network_forward
from selfonn.tensor import Tensor4, check_same_shape, clip01
from selfonn.tools import random_stream
from selfonn.values import DEFAULT_BATCH_SIZE, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPOCHS, DEFAULT_EPSILON, \
    DEFAULT_LEARNING_RATE, DEFAULT_SPLIT_RATIO, HISTORY_HEADER, STREAM_SHUFFLE, STREAM_TRAIN_NOISE, \
    STREAM_VAL_NOISE

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdamConfig:
    """
    Adam hyperparameters.

    Args:
        learning_rate: step size, constant over training
        beta1: first moment decay
        beta2: second moment decay
        epsilon: denominator offset
    """
    learning_rate: float = DEFAULT_LEARNING_RATE
    beta1: float = DEFAULT_BETA1
    beta2: float = DEFAULT_BETA2
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise InvalidArgument(f'Unexpected learning rate {self.learning_rate}, expected >= 0')
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InvalidArgument(f'Unexpected betas {self.beta1}, {self.beta2}, expected within [0, 1)')
        if not self.epsilon > 0:
            raise InvalidArgument(f'Unexpected epsilon {self.epsilon}, expected > 0')


@dataclass
class AdamState:
    """First and second moments per parameter tensor and the shared step counter."""
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros(cls, params: list[np.ndarray]) -> 'AdamState':
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


@dataclass(frozen=True)
class TrainConfig:
    """
    Training run settings.

    Args:
        noise: training and validation noise level and noise seed
        epochs: passes over the training split
        batch_size: patches per optimizer step, the last batch of an epoch may be smaller
        seed: split and shuffle seed
        split_ratio: training share of the patches
        adam: optimizer settings
    """
    noise: NoiseConfig
    epochs: int = DEFAULT_EPOCHS
    batch_size: int = DEFAULT_BATCH_SIZE
    seed: int = 0
    split_ratio: float = DEFAULT_SPLIT_RATIO
    adam: AdamConfig = field(default_factory=AdamConfig)

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidArgument(f'Unexpected epoch count {self.epochs}, expected >= 1')
        if self.batch_size < 1:
            raise InvalidArgument(f'Unexpected batch size {self.batch_size}, expected >= 1')


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_psnr: float


#
# Loss and Optimizer
#

def mse_loss(pred: Tensor4, target: Tensor4) -> tuple[float, Tensor4]:
    """
    Mean squared error over all elements.

    Returns:
        loss value
        gradient with respect to pred, 2 * (pred - target) / numel
    """
    check_same_shape(pred, target, 'prediction and target')
    diff = pred - target
    loss = float(np.mean(np.square(diff, dtype=np.float64)))
    return loss, diff * (2 / diff.size)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState,
              cfg: AdamConfig) -> tuple[list[np.ndarray], AdamState]:
    """
    One bias-corrected Adam update.

    Args:
        params: parameter tensors
        grads: gradients aligned with params
        state: moments of the previous step
        cfg: hyperparameters

    Returns:
        updated parameters
        updated state, its step counter advanced by one
    """
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise InvalidArgument(f'{len(params)} parameters, {len(grads)} gradients and {len(state.m)} moments given')
    for i, (p, g, m) in enumerate(zip(params, grads, state.m)):
        if p.shape != g.shape or p.shape != m.shape:
            raise InvalidArgument(f'Parameter {i} is shaped {p.shape}, gradient {g.shape}, moment {m.shape}')
        if not np.all(np.isfinite(g)):
            raise NumericError(f'Gradient of parameter {i} is not finite')

    t = state.t + 1
    correction1 = 1 - cfg.beta1 ** t
    correction2 = 1 - cfg.beta2 ** t

    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = cfg.beta1 * m + (1 - cfg.beta1) * g
        v = cfg.beta2 * v + (1 - cfg.beta2) * (g * g)
        step = (m / correction1) / (np.sqrt(v / correction2) + cfg.epsilon)
        new_params.append(p - cfg.learning_rate * step)
        new_m.append(m)
        new_v.append(v)

    return new_params, AdamState(new_m, new_v, t)


#
# Training Loop
#

def predict(net: Network, noisy: np.ndarray, batch_size: int) -> np.ndarray:
    """Clipped network output for a stack of noisy patches, computed batch by batch."""
    outputs = [clip01(network_forward(net, noisy[i:i + batch_size])[0]) for i in range(0, len(noisy), batch_size)]
    return np.concatenate(outputs) if outputs else np.zeros_like(noisy)


def validation_psnr(net: Network, clean: np.ndarray, noisy: np.ndarray, batch_size: int) -> float:
    """
    PSNR of the clipped network output from the MSE pooled over all validation patches, NaN when there are none.

    Patches reproduced exactly only lower the pooled error, the result is infinite only when every patch is.
    """
    if len(clean) == 0:
        return math.nan
    return psnr(clean, predict(net, noisy, batch_size))


def fit(net: Network, patches: PatchSet, cfg: TrainConfig) -> tuple[Network, list[EpochRecord]]:
    """
    Trains a copy of a network on noisy / clean patch pairs and keeps its best validation snapshot.

    Every epoch shuffles the training split, draws fresh noise for each patch and takes one Adam step per batch.
    Validation noise is drawn once, so epochs are compared on the same inputs.

    Args:
        net: initial network, left untouched
        patches: clean patches, split by cfg.split_ratio
        cfg: run settings

    Returns:
        network with the highest validation PSNR, the earliest epoch winning ties
        one record per epoch
    """
    if patches.channels != net.channels:
        raise InvalidArgument(f'Patches have {patches.channels} channels, network expects {net.channels}')
    footprint = max(l.kernel_size for l in net.spec.layers)
    if patches.patch_size < footprint:
        raise InvalidArgument(f'{patches.patch_size}x{patches.patch_size} patches are smaller than the '
                              f'{footprint}x{footprint} kernels')

    train, val = split_train_val(patches, cfg.split_ratio, cfg.seed)
    if len(train) == 0:
        raise InvalidArgument('Training split is empty')
    if len(val) == 0:
        logger.warning('Validation split is empty, the last epoch will be kept')

    net = net.copy()
    dtype = net.dtype
    val_clean = val.patches.astype(dtype)
    val_noisy = corrupt_batch(val_clean, cfg.noise, [(STREAM_VAL_NOISE, i) for i in range(len(val))])

    state = AdamState.zeros(net.parameters())
    history: list[EpochRecord] = []
    best_params, best_psnr = None, -math.inf
    for epoch in range(1, cfg.epochs + 1):
        order = random_stream(cfg.seed, STREAM_SHUFFLE, epoch).permutation(len(train))
        total = 0.0
        for batch, start in enumerate(range(0, len(train), cfg.batch_size)):
            indices = order[start:start + cfg.batch_size]
            clean = train.patches[indices].astype(dtype)
            noisy = corrupt_batch(clean, cfg.noise, [(STREAM_TRAIN_NOISE, epoch, int(i)) for i in indices])

            loss = math.nan
            try:
                pred, cache = network_forward(net, noisy)
                loss, grad = mse_loss(pred, clean)
                if not math.isfinite(loss):
                    raise NumericError('loss is not finite')
                params, state = adam_step(net.parameters(), network_backward(net, cache, grad), state, cfg.adam)
            except NumericError as e:
                raise NumericError(f'Training diverged at epoch {epoch}, batch {batch}, loss {loss}: {e}')

            net.set_parameters(params)
            total += loss * len(indices)
            logger.debug('epoch %d batch %d loss %.6f', epoch, batch, loss)

        record = EpochRecord(epoch, total / len(train), validation_psnr(net, val_clean, val_noisy, cfg.batch_size))
        history.append(record)

        improved = best_params is None or len(val) == 0 or record.val_psnr > best_psnr
        if improved:
            best_params = [a.copy() for a in net.parameters()]
            best_psnr = record.val_psnr
        logger.info('epoch %d/%d train loss %.6f val PSNR %.4f dB%s', epoch, cfg.epochs, record.train_loss,
                    record.val_psnr, ' *' if improved else '')

    best = net.copy()
    best.set_parameters(best_params)
    return best, history


def best_record(history: list[EpochRecord]) -> EpochRecord:
    """The record fit selects: highest validation PSNR, earliest on ties, last epoch without validation."""
    if all(math.isnan(r.val_psnr) for r in history):
        return history[-1]
    return max(history, key=lambda r: (r.val_psnr, -r.epoch))


def write_history_csv(history: list[EpochRecord], path: Union[str, Path]):
    """Writes epoch,train_loss,val_psnr rows with 6 decimal places."""
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(HISTORY_HEADER)
        for r in history:
            writer.writerow([r.epoch, f'{r.train_loss:.6f}', f'{r.val_psnr:.6f}'])

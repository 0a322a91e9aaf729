"""Contains worker pool and random stream helpers shared by the numeric modules."""
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Optional, TypeVar

import numpy as np

from selfonn.exceptions import InvalidArgument

T = TypeVar('T')
R = TypeVar('R')

THREADS_ENV = 'SELFONN_THREADS'
_SEED_MASK = (1 << 64) - 1

_threads = 0


def resolve_threads(requested: Optional[int] = None) -> int:
    """
    Determines the worker count: explicit request, then the SELFONN_THREADS variable, then the core count.

    Args:
        requested: optional explicit worker count

    Returns:
        positive worker count
    """
    if requested is None:
        env = os.environ.get(THREADS_ENV, '').strip()
        if env:
            try:
                requested = int(env)
            except ValueError:
                raise InvalidArgument(f'{THREADS_ENV} must be an integer, got {env!r}')
        else:
            requested = os.cpu_count() or 1

    if requested < 1:
        raise InvalidArgument(f'Unexpected thread count {requested}, expected >= 1')
    return requested


def set_threads(count: Optional[int] = None) -> int:
    """Caps the worker pool used by parallel_map. Returns the resolved count."""
    global _threads
    _threads = resolve_threads(count)
    return _threads


def get_threads() -> int:
    if not _threads:
        set_threads()
    return _threads


def parallel_map(fn: Callable[[T], R], items: Iterable[T]) -> list[R]:
    """
    Applies fn to every item, in parallel when more than one worker is allowed. Results keep the item order, and
    callers only hand over independent items, so the output never depends on the worker count.
    """
    items = list(items)
    workers = min(get_threads(), len(items))
    if workers <= 1:
        return [fn(item) for item in items]

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def random_stream(seed: int, *key: int) -> np.random.Generator:
    """
    Builds a counter-based (Philox) generator keyed by a seed and stable item indices, so the same key always yields
    the same draws regardless of iteration or thread order.
    """
    entropy = [int(seed) & _SEED_MASK] + [int(k) & _SEED_MASK for k in key]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))

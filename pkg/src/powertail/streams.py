"""Counter-based random streams.

Every block of randomness is addressed by (seed, purpose tag, block index) and
drawn from a Philox generator keyed by those numbers, either directly or as
the key of the kernels' counter stream (:func:`block_key`). A block can
therefore be regenerated in isolation, in any order, on any thread, which is
what makes the Monte Carlo harness independent of the number of workers.
"""

from __future__ import annotations

import numpy as np

MAIN = 1
PILOT = 2
AUX = 3
POISSON = 4
VERIFY = 5

_MASK64 = (1 << 64) - 1
_INDEX_BITS = 48


def check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed <= _MASK64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return seed


def _key(seed: int, tag: int, index: int) -> np.ndarray:
    if not 0 <= index < (1 << _INDEX_BITS):
        raise ValueError("block index out of range")
    return np.array([check_seed(seed), (int(tag) << _INDEX_BITS) | int(index)], dtype=np.uint64)


def bit_generator(seed: int, tag: int, index: int) -> np.random.Philox:
    return np.random.Philox(key=_key(seed, tag, index))


def generator(seed: int, tag: int, index: int) -> np.random.Generator:
    """A numpy Generator for block ``index`` of stream ``tag``."""
    return np.random.Generator(bit_generator(seed, tag, index))


def raw_block(seed: int, tag: int, index: int, shape) -> np.ndarray:
    """Raw 64-bit words for one block; kernels turn them into open uniforms."""
    shape = tuple(int(s) for s in np.atleast_1d(shape))
    size = int(np.prod(shape))
    return bit_generator(seed, tag, index).random_raw(size).reshape(shape)


def block_key(seed: int, tag: int, index: int) -> int:
    """64-bit key of the in-kernel counter stream for one block."""
    return int(bit_generator(seed, tag, index).random_raw())


def raw_to_uniform(raw: np.ndarray) -> np.ndarray:
    """Map 64-bit words to uniforms on the open interval (0, 1)."""
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


def derive_seed(seed: int, tag: int) -> int:
    """A new 64-bit seed derived from (seed, tag), e.g. for a fresh verification run."""
    return int(bit_generator(seed, AUX, int(tag) & ((1 << _INDEX_BITS) - 1)).random_raw())

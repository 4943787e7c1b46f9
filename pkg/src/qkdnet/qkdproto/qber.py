"""Error-rate estimation by public comparison of a sacrificial sample."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from ..errors import InsufficientSampleError

DEFAULT_MIN_SAMPLE = 200


class QberEstimate(NamedTuple):
    qber: float
    remaining_alice: np.ndarray
    remaining_bob: np.ndarray
    disclosed: int


def estimate_qber(alice: np.ndarray, bob: np.ndarray, sample_fraction: float,
                  rng_seed, min_sample: int = DEFAULT_MIN_SAMPLE) -> QberEstimate:
    """Compare a random agreed subset publicly and remove it from the key.

    The subset is chosen from a public seed so both parties sacrifice the
    same positions. The disclosed count is charged to the block's leakage.
    """
    alice = np.asarray(alice, dtype=np.uint8)
    bob = np.asarray(bob, dtype=np.uint8)
    if alice.size != bob.size:
        raise ValueError("keys must have equal length")
    if not 0.0 < sample_fraction < 1.0:
        raise ValueError("sample_fraction must be in (0, 1)")
    n = alice.size
    size = int(n * sample_fraction)
    if size < min_sample:
        raise InsufficientSampleError(
            f"sample of {size} bits is below the configured minimum of {min_sample}")

    rng = np.random.default_rng(rng_seed)
    idx = np.sort(rng.choice(n, size=size, replace=False))
    qber = float(np.count_nonzero(alice[idx] != bob[idx])) / size
    keep = np.ones(n, dtype=bool)
    keep[idx] = False
    return QberEstimate(qber, alice[keep], bob[keep], size)

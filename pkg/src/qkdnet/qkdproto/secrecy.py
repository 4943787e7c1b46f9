"""Entropy estimation and privacy amplification.

Two pluggable secret-length estimators:

* ``SIMPLE_SHANNON`` charges the adversary with the Shannon information of
  the observed error rate plus all public-channel leakage.
* ``MULTIPHOTON_AWARE`` additionally writes off every detection a
  photon-number-splitting attacker could explain with multi-photon
  emissions, keeping only the single-photon-attributable fraction. Under
  SARG sifting two-photon pulses do not hand the attacker the bit, so only
  three-photon-and-up emissions are written off.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from ..bits import binary_entropy
from ..errors import InvalidRequestError
from ..physlink import LinkParams, click_probability
from .sifting import SiftingProtocol

DEFAULT_SECURITY_MARGIN_BITS = 128


class EstimatorKind(Enum):
    SIMPLE_SHANNON = "simple_shannon"
    MULTIPHOTON_AWARE = "multiphoton_aware"


@dataclass(frozen=True)
class EntropyEstimator:
    """Choice of secret-fraction accounting, with a flat security margin."""

    kind: EstimatorKind = EstimatorKind.SIMPLE_SHANNON
    security_margin_bits: int = DEFAULT_SECURITY_MARGIN_BITS
    sifting: SiftingProtocol = SiftingProtocol.BB84

    def __post_init__(self):
        if self.security_margin_bits < 0:
            raise ValueError("security_margin_bits must be non-negative")


def multi_photon_fraction(mean_photon_number: float, threshold: int = 2) -> float:
    """Poisson probability of emitting ``threshold`` or more photons."""
    mu = mean_photon_number
    tail = 0.0
    term = 1.0
    for k in range(threshold):
        if k > 0:
            term *= mu / k
        tail += term
    return float(-np.expm1(-mu + math.log(tail))) if tail > 0 else 1.0


def estimate_secret_length(est: EntropyEstimator, n: int, qber: float,
                           bits_leaked: int, link: LinkParams | None = None) -> int:
    """Length of secret key distillable from ``n`` reconciled bits.

    Clamps at zero; the multiphoton-aware estimator returns zero whenever
    multi-photon emissions alone could explain every detection.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    qber = min(max(qber, 0.0), 0.5)
    shannon = n * (1.0 - binary_entropy(qber))

    if est.kind is EstimatorKind.SIMPLE_SHANNON:
        usable = shannon
    else:
        if link is None:
            raise ValueError("multiphoton-aware estimation needs the link parameters")
        threshold = 3 if est.sifting is SiftingProtocol.SARG else 2
        p_multi = multi_photon_fraction(link.mean_photon_number, threshold)
        p_click = click_probability(link)
        beta = 0.0 if p_click <= 0.0 else max(0.0, (p_click - p_multi) / p_click)
        usable = beta * shannon

    return max(0, math.floor(usable - bits_leaked - est.security_margin_bits))


def _bits_to_int(bits: np.ndarray) -> int:
    """Little-endian packing: bit i of the result is bits[i]."""
    if bits.size == 0:
        return 0
    packed = np.packbits(np.asarray(bits, dtype=np.uint8), bitorder="little")
    return int.from_bytes(packed.tobytes(), "little")


def privacy_amplify(key: np.ndarray, target_len: int, seed: np.ndarray) -> np.ndarray:
    """Compress ``key`` through the seed-defined binary Toeplitz matrix.

    The matrix T has ``T[i, j] = seed[i + n - 1 - j]`` for an n-bit key, so
    the seed must hold ``n + target_len - 1`` bits. Output bit i is the
    GF(2) inner product of row i with the key. Deterministic in
    (key, seed); over random seeds this is a universal hash family.
    """
    key = np.asarray(key, dtype=np.uint8)
    seed = np.asarray(seed, dtype=np.uint8)
    n = key.size
    if target_len < 0:
        raise InvalidRequestError("target_len must be non-negative")
    if target_len > n:
        raise InvalidRequestError(f"cannot stretch {n} bits to {target_len}")
    if target_len == 0:
        return np.zeros(0, dtype=np.uint8)
    if seed.size != n + target_len - 1:
        raise InvalidRequestError(
            f"seed must hold {n + target_len - 1} bits, got {seed.size}")

    # Row i's inner product equals popcount(seed[i : i+n] & reversed(key)).
    seed_int = _bits_to_int(seed)
    key_rev_int = _bits_to_int(key[::-1])
    mask = (1 << n) - 1
    out = np.empty(target_len, dtype=np.uint8)
    for i in range(target_len):
        out[i] = (((seed_int >> i) & mask) & key_rev_int).bit_count() & 1
    return out


def toeplitz_matrix(seed: np.ndarray, n_key: int, n_out: int) -> np.ndarray:
    """Materialize the Toeplitz matrix (small sizes; tests and docs)."""
    seed = np.asarray(seed, dtype=np.uint8)
    if seed.size != n_key + n_out - 1:
        raise InvalidRequestError("seed length must be n_key + n_out - 1")
    rows = np.empty((n_out, n_key), dtype=np.uint8)
    for i in range(n_out):
        for j in range(n_key):
            rows[i, j] = seed[i + n_key - 1 - j]
    return rows

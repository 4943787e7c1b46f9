"""Bit-array helpers. Bits are numpy uint8 arrays holding 0/1 values."""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = [
    "as_bits",
    "random_bits",
    "bits_to_bytes",
    "bytes_to_bits",
    "bits_to_hex",
    "parity",
    "xor_bits",
    "binary_entropy",
    "derive_rng",
    "derive_seed",
]


def as_bits(values) -> np.ndarray:
    """Coerce a sequence of 0/1 values to a uint8 bit array."""
    arr = np.asarray(values, dtype=np.uint8)
    if arr.ndim != 1:
        raise ValueError("bit arrays are one-dimensional")
    if arr.size and arr.max() > 1:
        raise ValueError("bit arrays may only contain 0 and 1")
    return arr


def random_bits(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.integers(0, 2, size=n, dtype=np.uint8)


def bits_to_bytes(bits: np.ndarray) -> bytes:
    """Pack bits big-endian into bytes, zero-padding the tail."""
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes()


def bytes_to_bits(data: bytes, n_bits: int) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8))
    if n_bits > bits.size:
        raise ValueError("byte string too short for requested bit count")
    return bits[:n_bits].astype(np.uint8)


def bits_to_hex(bits: np.ndarray) -> str:
    return bits_to_bytes(bits).hex()


def parity(bits: np.ndarray) -> int:
    return int(np.bitwise_xor.reduce(bits)) if bits.size else 0


def xor_bits(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ValueError("xor operands must have equal length")
    return np.bitwise_xor(a, b)


def binary_entropy(q: float) -> float:
    """Shannon entropy of a Bernoulli(q) source, in bits."""
    if q <= 0.0 or q >= 1.0:
        return 0.0
    return float(-q * np.log2(q) - (1.0 - q) * np.log2(1.0 - q))


def derive_seed(master_seed: int, *labels) -> np.random.SeedSequence:
    """Derive a reproducible, stream-independent seed from a master seed and labels.

    Labels are hashed so the derivation does not depend on call order, only on
    the (master_seed, labels) tuple. Used to give every simulated entity its
    own random stream.
    """
    words = [int(master_seed) & 0xFFFFFFFFFFFFFFFF]
    for label in labels:
        digest = hashlib.sha256(repr(label).encode("utf-8")).digest()
        words.append(int.from_bytes(digest[:8], "big"))
    return np.random.SeedSequence(words)


def derive_rng(master_seed: int, *labels) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, *labels))

"""Information-theoretic message authentication from one-time key material.

Each tag burns a fixed key budget: a 64-bit polynomial-hash selector plus a
64-bit one-time mask. The hash is evaluated over a prime field, so two
distinct messages collide under a random selector with probability at most
about message_length / 2^64; the mask makes the tag itself one-time.
Key consumption accounting lives in the keystore; these functions are pure.
"""

from __future__ import annotations

import hmac

import numpy as np

from ..bits import bits_to_bytes, bytes_to_bits

TAG_BITS = 64
AUTH_KEY_BITS_PER_TAG = 2 * TAG_BITS
_PRIME = (1 << 64) - 59  # largest 64-bit prime


def _poly_hash(selector: int, message: bytes) -> int:
    """Evaluate the message as a polynomial at the selector key, mod p.

    The message length is folded in as the leading coefficient so padding
    cannot create collisions between different-length messages.
    """
    h = len(message) % _PRIME
    for i in range(0, len(message), 8):
        block = int.from_bytes(message[i:i + 8], "little")
        h = (h * selector + block) % _PRIME
    return h


def auth_tag(auth_key: np.ndarray, message: bytes) -> np.ndarray:
    """Compute the 64-bit tag for ``message`` under 128 bits of one-time key.

    The caller is responsible for drawing ``auth_key`` from a reservoir and
    never reusing it; the same key and message always give the same tag.
    """
    auth_key = np.asarray(auth_key, dtype=np.uint8)
    if auth_key.size != AUTH_KEY_BITS_PER_TAG:
        raise ValueError(f"auth_tag needs exactly {AUTH_KEY_BITS_PER_TAG} key bits")
    selector = int.from_bytes(bits_to_bytes(auth_key[:TAG_BITS]), "big")
    mask = int.from_bytes(bits_to_bytes(auth_key[TAG_BITS:]), "big")
    tag_int = _poly_hash(selector, message) ^ mask
    return bytes_to_bits(tag_int.to_bytes(8, "big"), TAG_BITS)


def verify_tag(auth_key: np.ndarray, message: bytes, tag: np.ndarray) -> bool:
    """Recompute and compare in constant time."""
    expected = auth_tag(auth_key, message)
    return hmac.compare_digest(bits_to_bytes(expected), bits_to_bytes(np.asarray(tag, dtype=np.uint8)))

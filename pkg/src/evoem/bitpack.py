"""Bit-packing helpers for populations of binary latent states.

States are stored as uint8 arrays of 0/1 for vectorized arithmetic; for
hashing, dedup and ordering they are packed into big-endian uint64 words so
that comparing word tuples equals comparing bit strings lexicographically
(bit 0 is the most significant bit of word 0).
"""

from __future__ import annotations

import numpy as np


def n_words(h: int) -> int:
    return (h + 63) // 64


def pack_states(states: np.ndarray) -> np.ndarray:
    """Pack 0/1 arrays of shape (..., H) into (..., n_words(H)) uint64 keys.

    Trailing pad bits are zero, so keys of equal-H states compare like the
    underlying bit strings.
    """
    states = np.ascontiguousarray(states, dtype=np.uint8)
    h = states.shape[-1]
    w = n_words(h)
    packed = np.packbits(states, axis=-1)  # big-endian within each byte
    pad = 8 * w - packed.shape[-1]
    if pad:
        packed = np.concatenate(
            [packed, np.zeros(packed.shape[:-1] + (pad,), dtype=np.uint8)], axis=-1
        )
    words = packed.reshape(packed.shape[:-1] + (w, 8))
    return words.view(">u8")[..., 0].astype(np.uint64)


def unpack_words(words: np.ndarray, h: int) -> np.ndarray:
    """Inverse of pack_states: (..., W) uint64 -> (..., H) uint8."""
    words = np.asarray(words, dtype=np.uint64)
    as_bytes = words[..., None].astype(">u8").view(np.uint8)
    flat = as_bytes.reshape(words.shape[:-1] + (8 * words.shape[-1],))
    return np.unpackbits(flat, axis=-1)[..., :h].astype(np.uint8)


def state_key(bits: np.ndarray) -> bytes:
    """Hashable content key of a single state vector."""
    return pack_states(np.asarray(bits, dtype=np.uint8)).tobytes()


def lexsort_rows(words: np.ndarray) -> np.ndarray:
    """argsort of shape (N, M, W) key arrays along axis 1, lexicographic.

    Returns (N, M) index arrays. Stable, so equal keys keep input order.
    """
    n, m, w = words.shape
    perm = np.broadcast_to(np.arange(m), (n, m)).copy()
    # Sort by least-significant word first; each later stable sort dominates.
    for j in range(w - 1, -1, -1):
        col = np.take_along_axis(words[:, :, j], perm, axis=1)
        order = np.argsort(col, axis=1, kind="stable")
        perm = np.take_along_axis(perm, order, axis=1)
    return perm


def int_to_bits(value: int, h: int) -> np.ndarray:
    """Deterministic enumeration order: integer value read as the bit string
    with bit 0 the most significant."""
    return np.array([(value >> (h - 1 - i)) & 1 for i in range(h)], dtype=np.uint8)


def unique_rows(states: np.ndarray):
    """Deduplicate (P, H) 0/1 rows; returns (unique rows (U, H), inverse (P,))."""
    states = np.ascontiguousarray(states, dtype=np.uint8)
    h = states.shape[-1]
    keys = pack_states(states)
    if keys.shape[-1] == 1:
        uniq, inv = np.unique(keys[:, 0], return_inverse=True)
        return unpack_words(uniq[:, None], h), inv
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    return unpack_words(uniq, h), inv

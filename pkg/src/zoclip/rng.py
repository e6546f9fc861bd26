"""Counter-based deterministic random streams.

Every random quantity in this package is a pure function of a 64-bit key.
Keys are derived by folding words (integers or short strings such as stream
tags) into a SplitMix64-style state.  Draws are indexed by a counter, so a
stream can be evaluated at any slot, in any order, on any worker, and always
produces the same value.  This is what makes two-point oracle pairs share
their noise sample by construction and keeps parallel batches bit-reproducible.
"""

from __future__ import annotations

import hashlib

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64 = np.uint64
_TWO53_INV = 2.0 ** -53


def _mix64(h: np.ndarray | np.uint64) -> np.ndarray | np.uint64:
    """SplitMix64 finalizer; full avalanche on 64-bit words."""
    with np.errstate(over="ignore"):  # modular uint64 arithmetic is intended
        h = h ^ (h >> _U64(30))
        h = h * _MIX1
        h = h ^ (h >> _U64(27))
        h = h * _MIX2
        h = h ^ (h >> _U64(31))
    return h


def _word(w) -> np.uint64:
    if isinstance(w, str):
        digest = hashlib.blake2b(w.encode(), digest_size=8).digest()
        return _U64(int.from_bytes(digest, "little"))
    return _U64(int(w) & 0xFFFFFFFFFFFFFFFF)


def derive_key(*words) -> int:
    """Fold words (ints / tags) into a 64-bit stream key."""
    h = _U64(0x243F6A8885A308D3)
    with np.errstate(over="ignore"):
        for w in words:
            h = _mix64((h + _GOLDEN) ^ _word(w))
    return int(h)


def derive_keys(*words, index: np.ndarray) -> np.ndarray:
    """Vectorized `derive_key(*words, i)` over an integer index array."""
    h = _U64(0x243F6A8885A308D3)
    with np.errstate(over="ignore"):
        for w in words:
            h = _mix64((h + _GOLDEN) ^ _word(w))
        idx = np.asarray(index, dtype=np.uint64)
        return _mix64((h + _GOLDEN) ^ idx)


def uniforms(key, n: int, offset: int = 0) -> np.ndarray:
    """n doubles in the open interval (0, 1), counter slots offset..offset+n-1."""
    ctr = np.arange(offset + 1, offset + n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        raw = _mix64(_U64(int(key) & 0xFFFFFFFFFFFFFFFF) + _GOLDEN * ctr)
    return ((raw >> _U64(11)).astype(np.float64) + 0.5) * _TWO53_INV


def uniforms_block(keys: np.ndarray, n: int, offset: int = 0) -> np.ndarray:
    """Shape (len(keys), n) of uniforms in (0, 1); row k is stream keys[k]."""
    keys = np.asarray(keys, dtype=np.uint64)
    ctr = np.arange(offset + 1, offset + n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        raw = _mix64(keys[..., None] + _GOLDEN * ctr)
    return ((raw >> _U64(11)).astype(np.float64) + 0.5) * _TWO53_INV


def _box_muller(u: np.ndarray, n: int) -> np.ndarray:
    half = u.shape[-1] // 2
    u1 = u[..., :half]
    u2 = u[..., half:]
    r = np.sqrt(-2.0 * np.log(u1))
    theta = (2.0 * np.pi) * u2
    z = np.concatenate([r * np.cos(theta), r * np.sin(theta)], axis=-1)
    return z[..., :n]


def normals(key, n: int, offset: int = 0) -> np.ndarray:
    """n standard normal draws for the given stream key (Box-Muller)."""
    pairs = 2 * ((n + 1) // 2)
    return _box_muller(uniforms(key, pairs, offset=offset), n)


def normals_block(keys: np.ndarray, n: int, offset: int = 0) -> np.ndarray:
    """Shape (len(keys), n) standard normals; row k is stream keys[k]."""
    pairs = 2 * ((n + 1) // 2)
    return _box_muller(uniforms_block(keys, pairs, offset=offset), n)

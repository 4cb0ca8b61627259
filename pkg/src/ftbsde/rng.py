"""Counter-based Gaussian variates (Philox4x32-10 + Box-Muller), vectorized over counters.

Every variate is a pure function of ``(seed, stream, path, draw)``, so any subset of
paths can be regenerated on its own and the output never depends on evaluation order.
"""

from __future__ import annotations

import numpy as np

PHILOX_M0 = np.uint64(0xD2511F53)
PHILOX_M1 = np.uint64(0xCD9E8D57)
PHILOX_W0 = np.uint32(0x9E3779B9)
PHILOX_W1 = np.uint32(0xBB67AE85)
MASK32 = np.uint64(0xFFFFFFFF)

# stream words, kept disjoint so different consumers never share counters
STREAM_INCREMENTS = 0
STREAM_ENLARGEMENT = 1
STREAM_NESTED = 2


def _mulhilo(m: np.uint64, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    prod = x.astype(np.uint64) * m
    return (prod >> np.uint64(32)).astype(np.uint32), (prod & MASK32).astype(np.uint32)


def philox4x32(counter: np.ndarray, key: tuple[int, int], rounds: int = 10) -> np.ndarray:
    """Philox4x32 bijection applied to an ``(..., 4)`` uint32 counter array."""
    c = np.asarray(counter, dtype=np.uint32)
    c0, c1, c2, c3 = (c[..., j].copy() for j in range(4))
    k0 = np.uint32(key[0] & 0xFFFFFFFF)
    k1 = np.uint32(key[1] & 0xFFFFFFFF)
    with np.errstate(over="ignore"):
        for r in range(rounds):
            if r:
                k0 = np.uint32((int(k0) + int(PHILOX_W0)) & 0xFFFFFFFF)
                k1 = np.uint32((int(k1) + int(PHILOX_W1)) & 0xFFFFFFFF)
            hi0, lo0 = _mulhilo(PHILOX_M0, c0)
            hi1, lo1 = _mulhilo(PHILOX_M1, c2)
            c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return np.stack([c0, c1, c2, c3], axis=-1)


def _split_seed(seed: int) -> tuple[int, int]:
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    return seed & 0xFFFFFFFF, seed >> 32


def _uniform53(hi: np.ndarray, lo: np.ndarray) -> np.ndarray:
    # 53-bit mantissa, shifted by half an ulp so the result lies strictly in (0, 1)
    bits = (hi.astype(np.uint64) >> np.uint64(5)) * np.uint64(1 << 26) + (lo.astype(np.uint64) >> np.uint64(6))
    return (bits.astype(np.float64) + 0.5) * 2.0**-53


def gaussian_block(seed: int, stream: int, paths: np.ndarray, ndraws: int) -> np.ndarray:
    """Standard normals ``Z[p, j]`` for the given path indices and draws ``j < ndraws``.

    Counter layout: ``(draw_pair, path_lo, path_hi, stream)``; one Philox call yields two
    uniforms, hence two normals via Box-Muller.
    """
    paths = np.asarray(paths, dtype=np.uint64)
    npairs = (ndraws + 1) // 2
    ctr = np.empty((paths.size, npairs, 4), dtype=np.uint32)
    ctr[..., 0] = np.arange(npairs, dtype=np.uint32)[None, :]
    ctr[..., 1] = (paths & MASK32).astype(np.uint32)[:, None]
    ctr[..., 2] = (paths >> np.uint64(32)).astype(np.uint32)[:, None]
    ctr[..., 3] = np.uint32(stream)
    words = philox4x32(ctr, _split_seed(seed))
    u1 = _uniform53(words[..., 0], words[..., 1])
    u2 = _uniform53(words[..., 2], words[..., 3])
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    z = np.empty((paths.size, 2 * npairs))
    z[:, 0::2] = r * np.cos(theta)
    z[:, 1::2] = r * np.sin(theta)
    return z[:, :ndraws]


def derive_seed(seed: int, *words: int) -> int:
    """Deterministic 64-bit sub-seed from a parent seed and up to four tag words."""
    ctr = np.zeros(4, dtype=np.uint32)
    for j, w in enumerate(words[:4]):
        ctr[j] = np.uint32(int(w) & 0xFFFFFFFF)
    out = philox4x32(ctr[None, :], _split_seed(seed))[0]
    return int(out[0]) | (int(out[1]) << 32)

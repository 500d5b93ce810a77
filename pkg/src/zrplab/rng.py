"""Counter-based random streams for reproducible replica fan-out.

All simulation randomness comes from Philox4x32-10 evaluated inside the
compiled kernels, keyed by ``(master_seed; replica, stream, draw_index)``:
the 64-bit master seed is the Philox key and the 128-bit counter packs the
draw index (64 bits), the replica (32 bits) and the stream id (32 bits).
Replicas and streams are therefore independent, replayable in isolation, and
insensitive to worker scheduling or chunk boundaries.  Stream ids separate
logically independent sources inside one replica; couplings rely on the two
mark fields being distinct streams so one can be replayed while the other is
re-seeded.

The pure-numpy :func:`stream` generator (numpy's own Philox) is kept for
light-duty uses: bootstrap resampling, test scaffolding.
"""

from __future__ import annotations

import numpy as np
from numba import njit
from numpy.random import Generator, Philox

STREAM_INIT = 0
STREAM_MARKS = 1
STREAM_MARKS_2 = 2
STREAM_BOOTSTRAP = 3
STREAM_AUX = 4
STREAM_REPLAY_MARKS_2 = 9

_PHILOX_M0 = np.uint64(0xD2511F53)
_PHILOX_M1 = np.uint64(0xCD9E8D57)
_PHILOX_W0 = np.uint64(0x9E3779B9)
_PHILOX_W1 = np.uint64(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)
_INV53 = 1.0 / 9007199254740992.0   # 2**-53
_INV32 = 1.0 / 4294967296.0         # 2**-32


@njit(cache=True, inline="always")
def philox_round(c0, c1, c2, c3, k0, k1):
    p0 = _PHILOX_M0 * c0
    p1 = _PHILOX_M1 * c2
    hi0 = p0 >> np.uint64(32)
    lo0 = p0 & _MASK32
    hi1 = p1 >> np.uint64(32)
    lo1 = p1 & _MASK32
    return hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0


@njit(cache=True, inline="always")
def philox4x32(idx, replica, stream, k0, k1):
    """Philox4x32-10 block: counter = (idx, replica, stream), key = seed."""
    c0 = idx & _MASK32
    c1 = (idx >> np.uint64(32)) & _MASK32
    c2 = replica
    c3 = stream
    for _ in range(10):
        c0, c1, c2, c3 = philox_round(c0, c1, c2, c3, k0, k1)
        k0 = (k0 + _PHILOX_W0) & _MASK32
        k1 = (k1 + _PHILOX_W1) & _MASK32
    return c0, c1, c2, c3


@njit(cache=True, inline="always")
def draw_candidate(idx, replica, stream, k0, k1):
    """One 128-bit block as (u_dt, u_pick, u_acc) uniforms in [0, 1).

    u_pick carries 53 bits (it is decomposed into particle slot, height and
    direction), the other two carry 32 bits each.
    """
    w0, w1, w2, w3 = philox4x32(idx, replica, stream, k0, k1)
    u_dt = w0 * _INV32
    u_pick = (((w1 << np.uint64(32)) | w2) >> np.uint64(11)) * _INV53
    u_acc = w3 * _INV32
    return u_dt, u_pick, u_acc


@njit(cache=True, inline="always")
def draw_uniform64(idx, replica, stream, k0, k1):
    """One 53-bit uniform in [0, 1)."""
    w0, w1, _, _ = philox4x32(idx, replica, stream, k0, k1)
    return (((w0 << np.uint64(32)) | w1) >> np.uint64(11)) * _INV53


@njit(cache=True, inline="always")
def split_seed(master_seed):
    s = np.uint64(master_seed)
    return s & _MASK32, (s >> np.uint64(32)) & _MASK32


@njit(cache=True)
def uniform_fill(out, master_seed, replica, stream, start_idx):
    """Fill ``out`` with 53-bit uniforms from consecutive counter values."""
    k0, k1 = split_seed(master_seed)
    rep = np.uint64(replica)
    st = np.uint64(stream)
    idx = np.uint64(start_idx)
    one = np.uint64(1)
    for i in range(out.shape[0]):
        out[i] = draw_uniform64(idx, rep, st, k0, k1)
        idx += one
    return idx


def uniforms(master_seed: int, replica: int, stream_id: int, n: int,
             start_idx: int = 0) -> np.ndarray:
    """Vectorized uniforms from the keyed counter stream (numba-backed)."""
    out = np.empty(int(n))
    uniform_fill(out, master_seed, replica, stream_id, start_idx)
    return out


def stream(master_seed: int, replica: int = 0, stream_id: int = 0) -> Generator:
    """numpy Generator keyed like the kernel streams (light-duty use only)."""
    if replica < 0 or stream_id < 0:
        raise ValueError("replica and stream_id must be non-negative")
    key = np.array(
        [np.uint64(master_seed & 0xFFFFFFFFFFFFFFFF),
         np.uint64((replica << 6) | stream_id)],
        dtype=np.uint64,
    )
    return Generator(Philox(key=key))

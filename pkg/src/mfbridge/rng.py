"""Counter-based uniforms addressed by (seed, replication, period, player, purpose).

Every draw is a pure function of its coordinates, so results do not depend on
how replications are split across workers or in which order they run.
"""

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1

# draw purposes
INIT = 1
ACTION = 2
TRANSITION = 3
RESAMPLE = 4


def _mix(x: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer on uint64 arrays (wrapping arithmetic)."""
    x = x + _GOLDEN
    x = (x ^ (x >> np.uint64(30))) * _M1
    x = (x ^ (x >> np.uint64(27))) * _M2
    return x ^ (x >> np.uint64(31))


def _u64(v) -> np.ndarray:
    a = np.asarray(v)
    if a.dtype.kind in "iu":
        return a.astype(np.int64).view(np.uint64) if a.dtype.kind == "i" else a.astype(np.uint64)
    raise TypeError("integer coordinates required")


def derive_seed(seed: int, *tags: int) -> int:
    """Independent sub-seed for a labelled sub-experiment."""
    x = np.array([seed & _MASK64], dtype=np.uint64)
    with np.errstate(over="ignore"):
        for tag in tags:
            x = _mix(x ^ np.uint64(tag & _MASK64))
    return int(x[0])


def uniforms(seed: int, rep, period: int, player, purpose: int) -> np.ndarray:
    """Uniform doubles in [0, 1) broadcast over ``rep`` and ``player`` arrays."""
    rep, player = np.broadcast_arrays(_u64(rep), _u64(player))
    key = np.uint64(seed & _MASK64)
    with np.errstate(over="ignore"):
        x = _mix(np.full(rep.shape, key, dtype=np.uint64) ^ np.uint64((period << 8 | purpose) & _MASK64))
        x = _mix(x ^ rep)
        x = _mix(x ^ (player * _GOLDEN))
    return (x >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)

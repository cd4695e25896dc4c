"""Counter-based random streams for the rollout engine.

Samples are pure functions of ``(key, stream, seed_index, step)``, so
rollouts are reproducible bit-for-bit regardless of chunking, execution
order, or how many seeds are still alive. The mixer is the splitmix64
finalizer applied to a combination of the inputs.
"""

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_STREAM_SALT = np.uint64(0xD6E8FEB86659FD93)
_STEP_SALT = np.uint64(0xA5A5A5A5A5A5A5A5)

CONTROL_STREAM = 0
DISTURBANCE_STREAM = 1  # component j uses DISTURBANCE_STREAM + j


def _mix(z):
    z = z + _GOLDEN
    z = z ^ (z >> np.uint64(30))
    z = z * _MIX1
    z = z ^ (z >> np.uint64(27))
    z = z * _MIX2
    return z ^ (z >> np.uint64(31))


def counter_uniform(key: int, stream: int, seed_index, step: int) -> np.ndarray:
    """Uniform [0, 1) draws indexed by seed, vectorized over ``seed_index``."""
    idx = np.asarray(seed_index, dtype=np.uint64)
    with np.errstate(over="ignore"):
        base = _mix(np.uint64(key))
        base = _mix(base ^ (np.uint64(stream) * _STREAM_SALT))
        base = _mix(base ^ (np.uint64(step) * _STEP_SALT))
        bits = _mix(idx ^ base)
    return (bits >> np.uint64(11)).astype(np.float64) * (2.0**-53)

"""splitmix64-seeded xoshiro256++ streams, vectorized across stream keys.

Each lane of a :class:`Xoshiro256pp` is an independent stream derived from
``(seed, key)``, so a clip's draws never depend on which other clips are
generated alongside it.
"""

import numpy as np

_GOLDEN = 0x9E3779B97F4A7C15
_KEY_MIX = 0xD1B54A32D192ED03
_TWO_PI = 2.0 * np.pi
_INV_2_53 = 1.0 / 9007199254740992.0


def splitmix64(state: np.ndarray):
    """One splitmix64 step for every lane; returns (next_state, output)."""
    state = state + np.uint64(_GOLDEN)
    z = state
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return state, z ^ (z >> np.uint64(31))


def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


class Xoshiro256pp:
    def __init__(self, seed: int, keys):
        keys = np.atleast_1d(np.asarray(keys, dtype=np.uint64))
        sm = np.full(keys.shape, seed & 0xFFFFFFFFFFFFFFFF, dtype=np.uint64)
        sm = sm ^ (keys * np.uint64(_KEY_MIX))
        words = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            words.append(out)
        self.s0, self.s1, self.s2, self.s3 = words

    @property
    def lanes(self) -> int:
        return self.s0.shape[0]

    def next_u64(self) -> np.ndarray:
        s0, s1, s2, s3 = self.s0, self.s1, self.s2, self.s3
        result = _rotl(s0 + s3, 23) + s0
        t = s1 << np.uint64(17)
        s2 = s2 ^ s0
        s3 = s3 ^ s1
        s1 = s1 ^ s2
        s0 = s0 ^ s3
        s2 = s2 ^ t
        s3 = _rotl(s3, 45)
        self.s0, self.s1, self.s2, self.s3 = s0, s1, s2, s3
        return result

    def uniform(self, count: int) -> np.ndarray:
        """(count, lanes) doubles in [0, 1)."""
        out = np.empty((count, self.lanes))
        for i in range(count):
            out[i] = (self.next_u64() >> np.uint64(11)).astype(np.float64) * _INV_2_53
        return out

    def normal(self, count: int) -> np.ndarray:
        """(count, lanes) standard normals, one Box-Muller pair per value."""
        out = np.empty((count, self.lanes))
        for i in range(count):
            u1 = ((self.next_u64() >> np.uint64(11)).astype(np.float64) + 1.0) * _INV_2_53
            u2 = (self.next_u64() >> np.uint64(11)).astype(np.float64) * _INV_2_53
            out[i] = np.sqrt(-2.0 * np.log(u1)) * np.cos(_TWO_PI * u2)
        return out

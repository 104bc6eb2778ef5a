"""Counter-based SplitMix64 RNG: same seed gives the same stream everywhere.

Each consumer (init, dropout, shuffling, data generation) gets its own
stream derived from the base seed and a label, so adding one consumer
never shifts the draws of another.
"""

import numpy as np

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _mix(z):
    z = np.uint64(z)
    with np.errstate(over="ignore"):
        z ^= z >> np.uint64(30)
        z *= _MIX1
        z ^= z >> np.uint64(27)
        z *= _MIX2
        z ^= z >> np.uint64(31)
    return z


def derive_seed(seed: int, label: str) -> int:
    """Derive a stream seed from a base seed and a consumer label."""
    h = _FNV_OFFSET
    for byte in label.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return int(_mix(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) ^ np.uint64(h)))


class Stream:
    """A single deterministic random stream with a monotone counter."""

    def __init__(self, seed: int):
        self.seed = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        self.counter = 0

    def raw(self, count: int) -> np.ndarray:
        ks = np.arange(self.counter + 1, self.counter + count + 1, dtype=np.uint64)
        self.counter += count
        with np.errstate(over="ignore"):
            return _mix(self.seed + ks * _GOLDEN)

    def uniform(self, size=None, low: float = 0.0, high: float = 1.0):
        """Uniform floats in [low, high) with 53-bit resolution."""
        n = 1 if size is None else int(np.prod(size))
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        out = low + (high - low) * u
        if size is None:
            return float(out[0])
        return out.reshape(size)

    def normal(self, size=None, sigma: float = 1.0):
        """Gaussian via Box-Muller on paired uniforms."""
        n = 1 if size is None else int(np.prod(size))
        m = (n + 1) // 2
        # shift into (0, 1] so log never sees 0
        u1 = ((self.raw(m) >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
        u2 = (self.raw(m) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        rad = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([rad * np.cos(2 * np.pi * u2), rad * np.sin(2 * np.pi * u2)])[:n]
        out = sigma * z
        if size is None:
            return float(out[0])
        return out.reshape(size)

    def permutation(self, n: int) -> np.ndarray:
        # argsort of 64-bit keys; stable sort keeps this deterministic
        keys = self.raw(n)
        return np.argsort(keys, kind="stable")


def stream(seed: int, label: str) -> Stream:
    return Stream(derive_seed(seed, label))

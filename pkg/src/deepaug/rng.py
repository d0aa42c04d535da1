"""Counter-based PRNG with a fixed normal-deviate method.

Every random draw in the toolkit comes from :class:`Stream`, so results do not
depend on numpy's default generator. Each stream is keyed by a 64-bit value;
the i-th raw output is ``splitmix64(key + i * GOLDEN)``. Uniforms use the top
53 bits; normals use Box-Muller on pairs of uniforms.
"""
import hashlib

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def derive_seed(*parts) -> int:
    """Hash an arbitrary tuple of ints/strings into a 64-bit key.

    Used to key per-step, per-purpose streams, e.g.
    ``derive_seed(seed, epoch, step, "plan")``.
    """
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(repr(p).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


class Stream:
    def __init__(self, seed: int):
        self.key = np.uint64(int(seed) & _MASK64)
        self.counter = 0

    @classmethod
    def of(cls, *parts) -> "Stream":
        return cls(derive_seed(*parts))

    def raw(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _mix(self.key + idx * GOLDEN)

    def uniform(self, shape) -> np.ndarray:
        """Float64 uniforms in [0, 1) with 53 bits of resolution."""
        n = int(np.prod(shape, dtype=np.int64))
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        return u.reshape(shape)

    def normal(self, shape) -> np.ndarray:
        n = int(np.prod(shape, dtype=np.int64))
        m = (n + 1) // 2
        u = self.uniform(2 * m)
        u1 = 1.0 - u[0::2]  # (0, 1], keeps log finite
        u2 = u[1::2]
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * m)
        z[0::2] = r * np.cos(2.0 * np.pi * u2)
        z[1::2] = r * np.sin(2.0 * np.pi * u2)
        return z[:n].reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.raw(n), kind="stable")

"""Counter-based deterministic random number generation.

The generator is SplitMix64 used in counter mode: output ``i`` of a stream
with seed ``s`` is ``mix64(s + (i+1)*GOLDEN)`` where ``mix64`` is the
finalizer below and GOLDEN is the 64-bit golden-ratio constant. Because each
output depends only on (seed, counter), any draw can be regenerated in
isolation, and per-sample streams are derived by mixing (base_seed, index)
with the same function. All constants are fixed so any language reproduces
the streams bit-for-bit.
"""

from __future__ import annotations

import math

import numpy as np

GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_MASK = (1 << 64) - 1

_U53 = float(2**-53)


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a 64-bit integer (Python ints, masked)."""
    z &= _MASK
    z = (z ^ (z >> 30)) * _MIX1 & _MASK
    z = (z ^ (z >> 27)) * _MIX2 & _MASK
    return z ^ (z >> 31)


def derive_seed(base_seed: int, index: int) -> int:
    """Stream seed for sample ``index`` under ``base_seed``."""
    return mix64(base_seed + (index + 1) * GOLDEN)


class Stream:
    """One deterministic draw stream: a seed plus a running counter.

    Draw methods consume counter positions in documented order; callers that
    need reproducibility across versions must keep their call sequences
    stable.
    """

    __slots__ = ("seed", "counter")

    def __init__(self, seed: int):
        self.seed = seed & _MASK
        self.counter = 0

    def u64(self, n: int) -> np.ndarray:
        """Next ``n`` raw 64-bit outputs as a uint64 array."""
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        z = np.uint64(self.seed) + idx * np.uint64(GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))

    def u01(self, n: int) -> np.ndarray:
        """Uniform [0, 1) doubles from the top 53 bits of each output."""
        return (self.u64(n) >> np.uint64(11)).astype(np.float64) * _U53

    def uniform(self, lo: float, hi: float, n: int) -> np.ndarray:
        return lo + (hi - lo) * self.u01(n)

    def pick(self, n_choices: int) -> int:
        """Index in [0, n_choices) from one output (modulo; bias < 2^-50)."""
        return int(self.u64(1)[0] % np.uint64(n_choices))

    def normal(self, n: int) -> np.ndarray:
        """Standard normals via Box-Muller.

        Consumes 2*ceil(n/2) outputs: per pair, u1 then u2; emits
        r*cos(2*pi*u2) then r*sin(2*pi*u2) with r = sqrt(-2*ln(1-u1)).
        """
        m = (n + 1) // 2
        u = self.u01(2 * m)
        u1, u2 = u[0::2], u[1::2]
        r = np.sqrt(-2.0 * np.log1p(-u1))
        ang = (2.0 * math.pi) * u2
        out = np.empty(2 * m, dtype=np.float64)
        out[0::2] = r * np.cos(ang)
        out[1::2] = r * np.sin(ang)
        return out[:n]

    def cnormal(self, n: int) -> np.ndarray:
        """Circular complex Gaussians CN(0, 1): (g_re + j*g_im)/sqrt(2)."""
        g = self.normal(2 * n)
        return (g[0::2] + 1j * g[1::2]) / math.sqrt(2.0)

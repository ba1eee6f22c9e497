"""Seedable random streams for bit-reproducible episode generation.

Streams are xoshiro256** generators whose 256-bit state is derived from a
(master_seed, episode_index) pair through SplitMix64, so any episode can be
regenerated in isolation and independent workers never share generator state.
"""

from __future__ import annotations

import math

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

# Fallback state for the (vanishingly unlikely) all-zero derivation, which
# xoshiro cannot escape from.
_NONZERO_STATE = (
    0x853C49E6748FEA9B,
    0xDA3E39CB94B95BDB,
    0xC4CEB9FE1A85EC53,
    0xFF51AFD7ED558CCD,
)


def _splitmix64_next(state: int) -> tuple[int, int]:
    """One SplitMix64 step; returns (output, next_state)."""
    state = (state + _GOLDEN) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31), state


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class RngStream:
    """A single-owner xoshiro256** stream with Box-Muller gaussian support.

    Never share one stream between concurrent workers; derive one stream per
    episode index instead.
    """

    __slots__ = ("_s0", "_s1", "_s2", "_s3", "_gauss_cache")

    def __init__(self, state: tuple[int, int, int, int]):
        if not any(state):
            state = _NONZERO_STATE
        self._s0, self._s1, self._s2, self._s3 = (s & _MASK64 for s in state)
        self._gauss_cache: float | None = None

    @property
    def state(self) -> tuple[int, int, int, int]:
        return (self._s0, self._s1, self._s2, self._s3)

    def next_raw(self) -> int:
        """Next 64-bit output."""
        s0, s1, s2, s3 = self._s0, self._s1, self._s2, self._s3
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s0, self._s1, self._s2, self._s3 = s0, s1, s2, s3
        return result

    def next_float(self) -> float:
        """Uniform in [0, 1) with 53-bit resolution."""
        return (self.next_raw() >> 11) * 2.0**-53

    def next_float_open(self) -> float:
        """Uniform in (0, 1]; safe as a log() argument."""
        return ((self.next_raw() >> 11) + 1) * 2.0**-53

    def gaussian(self, mean: float = 0.0, std: float = 1.0) -> float:
        """Standard Box-Muller draw.

        Both uniforms of a pair are consumed together; the second output is
        cached on the stream and returned by the following call.
        """
        if self._gauss_cache is not None:
            z = self._gauss_cache
            self._gauss_cache = None
        else:
            u1 = self.next_float_open()
            u2 = self.next_float()
            r = math.sqrt(-2.0 * math.log(u1))
            z = r * math.cos(2.0 * math.pi * u2)
            self._gauss_cache = r * math.sin(2.0 * math.pi * u2)
        return mean + std * z

    def clear_gauss_cache(self) -> None:
        self._gauss_cache = None


def derive_stream(master_seed: int, episode_index: int) -> RngStream:
    """Derive the independent stream for one episode.

    The derivation is fixed for all time: seed SplitMix64 with
    ``master_seed XOR (episode_index * 0x9E3779B97F4A7C15)`` and take four
    outputs as the xoshiro256** state.
    """
    sm_state = (master_seed ^ ((episode_index * _GOLDEN) & _MASK64)) & _MASK64
    out = []
    for _ in range(4):
        value, sm_state = _splitmix64_next(sm_state)
        out.append(value)
    return RngStream(tuple(out))

"""Deterministic seed derivation and seeded random streams.

Every stochastic operation in the toolkit draws from a :class:`SeededRng`.
Pipeline stages obtain their stream seed through :func:`derive_seed`, a fixed
64-bit mixing function, so results are reproducible across platforms, worker
counts and scheduling order.
"""

from __future__ import annotations

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF
_FNV_OFFSET64 = 0xCBF29CE484222325
_FNV_PRIME64 = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash (Python's hash() is salted per process, this is not)."""
    h = _FNV_OFFSET64
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME64) & _MASK64
    return h


def _mix64(z: int) -> int:
    """splitmix64 finalizer step."""
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z ^= z >> 30
    z = (z * 0xBF58476D1CE4E5B9) & _MASK64
    z ^= z >> 27
    z = (z * 0x94D049BB133111EB) & _MASK64
    z ^= z >> 31
    return z


def derive_seed(master_seed: int, frame_id: str, stage_tag: str) -> int:
    """Derive a 64-bit stream seed from (master seed, frame id, stage tag).

    Normative definition (do not change; manifests rely on it)::

        h = mix64(master_seed)
        h = mix64(h ^ fnv1a64(utf8(frame_id)))
        h = mix64(h ^ fnv1a64(utf8(stage_tag)))

    where ``mix64`` is the splitmix64 finalizer. Distinct stage tags
    ("generate", "augment", "inject", ...) decouple the random streams of
    different pipeline stages for the same frame.
    """
    h = _mix64(int(master_seed) & _MASK64)
    h = _mix64(h ^ fnv1a64(str(frame_id).encode("utf-8")))
    h = _mix64(h ^ fnv1a64(str(stage_tag).encode("utf-8")))
    return h


class SeededRng:
    """Deterministic random stream.

    Identical seed + identical call sequence => identical outputs. Backed by
    numpy's PCG64, whose bit stream is fixed for a given seed.
    """

    def __init__(self, seed: int):
        self.master_seed = int(seed) & _MASK64
        self._gen = np.random.Generator(np.random.PCG64(self.master_seed))

    def random(self, size=None):
        """Uniform float(s) in [0, 1)."""
        return self._gen.random(size)

    def randint(self, low: int, high: int) -> int:
        """Uniform integer in the inclusive range [low, high]."""
        return int(self._gen.integers(low, high, endpoint=True))

    def normal(self, loc: float, scale: float, size=None):
        return self._gen.normal(loc, scale, size)

    def uniform_open_closed(self, scale: float) -> float:
        """Uniform float in the half-open interval (0, scale]."""
        return scale * (1.0 - self._gen.random())

    def spawn(self, tag: str) -> "SeededRng":
        """Independent child stream named by ``tag``."""
        return SeededRng(derive_seed(self.master_seed, tag, "spawn"))

    def __repr__(self) -> str:
        return f"SeededRng(seed={self.master_seed:#018x})"

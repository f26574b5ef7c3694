"""Counter-based seeded randomness with derivable substreams.

Built on numpy's Philox bit generator, whose output for a given key is a
pure integer function and therefore bit-identical across platforms.
Substreams are derived by hashing the parent key together with integer
indices, so (seed, epoch, sample, branch) and similar tuples map to
statistically independent streams without any sequential coupling.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

_DOMAIN = b"siamgrid.rng.v1"


def _derive_key(parent: bytes, indices: tuple[int, ...]) -> bytes:
    h = hashlib.sha256()
    h.update(_DOMAIN)
    h.update(parent)
    for idx in indices:
        h.update(struct.pack("<q", idx))
    return h.digest()[:16]


class SeededRng:
    """Deterministic random stream: same seed + same call sequence -> same draws."""

    def __init__(self, seed: int, _key: bytes | None = None):
        self.seed = int(seed)
        self._key = _key if _key is not None else _derive_key(b"root", (self.seed,))
        key_words = np.frombuffer(self._key, dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key_words))

    def substream(self, *indices: int) -> "SeededRng":
        """A fresh independent stream keyed by this stream plus the indices."""
        return SeededRng(self.seed, _key=_derive_key(self._key, tuple(int(i) for i in indices)))

    # -- draws ------------------------------------------------------------

    def uniform(self, lo: float = 0.0, hi: float = 1.0, size=None):
        return self._gen.uniform(lo, hi, size=size)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size=None):
        return self._gen.normal(loc, scale, size=size)

    def integers(self, lo: int, hi: int, size=None):
        """Uniform integers in [lo, hi) (hi exclusive)."""
        return self._gen.integers(lo, hi, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice_without_replacement(self, n: int, k: int) -> np.ndarray:
        """First k entries of a random permutation of range(n)."""
        if k > n:
            raise ValueError(f"cannot choose {k} items from {n} without replacement")
        return self.permutation(n)[:k]

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, key={self._key.hex()[:8]}...)"

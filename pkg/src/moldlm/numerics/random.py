"""Named, splittable seed streams.

Every subsystem (data, masking, init, sampling) derives its own stream from
one root seed, so experiments are bit-reproducible regardless of the order in
which subsystems consume randomness.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["SeedStream"]


class SeedStream:
    """A deterministic tree of RNG streams addressed by name paths."""

    def __init__(self, seed: int, path: tuple[str, ...] = ()):
        self.seed = int(seed)
        self.path = tuple(path)
        self._rng: np.random.Generator | None = None

    def child(self, name: str) -> "SeedStream":
        return SeedStream(self.seed, self.path + (str(name),))

    @property
    def rng(self) -> np.random.Generator:
        """The stream's stateful generator (created lazily, advanced by use)."""
        if self._rng is None:
            self._rng = self.fresh_rng()
        return self._rng

    def fresh_rng(self) -> np.random.Generator:
        """A new generator at the stream's initial state."""
        return np.random.default_rng(self._entropy())

    def _entropy(self) -> int:
        key = ("%d:" % self.seed) + "/".join(self.path)
        digest = hashlib.sha256(key.encode("utf-8")).digest()
        return int.from_bytes(digest[:16], "little")

    def __repr__(self):
        return f"SeedStream(seed={self.seed}, path={'/'.join(self.path) or '<root>'})"

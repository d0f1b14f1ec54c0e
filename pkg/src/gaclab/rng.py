"""Named random streams derived from a single seed.

Each stream is seeded from ``(seed, sha256(name))`` so adding or removing a
consumer of one stream never shifts the draws of another.
"""
import hashlib

import numpy as np

STREAMS = ("env", "policy-init", "noise", "replay", "eval")


def _name_key(name):
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(seed, name):
    return np.random.default_rng(np.random.SeedSequence([int(seed), _name_key(name)]))


class RngStreams:
    """Lazily created, cached named generators for one seed."""

    def __init__(self, seed):
        self.seed = int(seed)
        self._cache = {}

    def __getitem__(self, name):
        if name not in self._cache:
            self._cache[name] = substream(self.seed, name)
        return self._cache[name]

"""Deterministic named rng streams.

Every stochastic consumer (data shuffling, flow noise, posterior sampling,
actor exploration, environment resets) gets its own stream derived from the
master seed and a string name. Streams are independent, so adding or removing
one consumer never shifts the draws seen by another; several reproducibility
contracts (plug-in neutrality, zero-perturbation identity) rely on this.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(master_seed: int, name: str) -> np.random.Generator:
    """Generator for (master_seed, name), stable across runs and platforms."""
    tag = zlib.crc32(name.encode("utf-8"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([master_seed, tag])))


class RngBundle:
    """Named rng streams used inside a rollout or training loop.

    ``get(name)`` creates the stream lazily on first use and caches it, so two
    loops that consume the same subset of names draw identical values even if
    one of them never touches the other's streams.
    """

    def __init__(self, master_seed: int):
        self.master_seed = int(master_seed)
        self._streams: dict[str, np.random.Generator] = {}

    def get(self, name: str) -> np.random.Generator:
        if name not in self._streams:
            self._streams[name] = stream(self.master_seed, name)
        return self._streams[name]

"""Splittable, seeded random streams.

A stream is identified by ``(seed, path)`` where ``path`` is a tuple of
non-negative integers. The generator behind a stream is numpy's counter
based Philox bit generator keyed through ``SeedSequence(seed,
spawn_key=path)``. Normal variates come from ``Generator.standard_normal``
(numpy's ziggurat), which is platform independent for a fixed numpy
release; that pairing is the reproducibility contract.

Distinct paths give statistically independent streams, so parallel trial
workers simply take ``stream.child(i)``.
"""
from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class Rng:
    seed: int
    path: tuple = ()

    def __post_init__(self):
        if not 0 <= self.seed <= _MASK64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        for p in self.path:
            if not 0 <= p <= _MASK64:
                raise ValueError(f"stream id must be a 64-bit unsigned integer, got {p}")

    def child(self, *ids):
        """Sub-stream; ``child(a, b)`` equals ``child(a).child(b)``."""
        return Rng(self.seed, self.path + tuple(int(i) for i in ids))

    def generator(self):
        """Fresh numpy Generator positioned at the start of this stream."""
        ss = np.random.SeedSequence(self.seed, spawn_key=self.path)
        return np.random.Generator(np.random.Philox(ss))


def as_generator(rng):
    """Accept an :class:`Rng`, a numpy Generator or an integer seed."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, Rng):
        return rng.generator()
    if isinstance(rng, (int, np.integer)):
        return Rng(int(rng)).generator()
    raise TypeError(f"cannot build a random generator from {type(rng).__name__}")

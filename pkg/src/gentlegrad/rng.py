"""Counter-based random streams.

Every stochastic routine takes an ``rng`` argument that may be an
:class:`RngStream`, a ``numpy.random.Generator`` or a plain integer seed.
Streams are keyed on ``(seed, stream_id)`` and backed by Philox, so two
streams with the same key always produce the same draws regardless of
what other streams have done.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["RngStream", "as_generator"]


@dataclass
class RngStream:
    seed: int
    stream_id: int = 0
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (0 <= self.seed < 2**64 and 0 <= self.stream_id < 2**64):
            raise ValueError("seed and stream_id must be 64-bit unsigned integers")
        ss = np.random.SeedSequence([self.seed, self.stream_id])
        self._gen = np.random.Generator(np.random.Philox(ss))

    @property
    def gen(self) -> np.random.Generator:
        return self._gen

    def spawn(self, stream_id: int) -> "RngStream":
        """Independent stream sharing this seed (e.g. one per shot batch)."""
        return RngStream(self.seed, stream_id)


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.gen
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None or isinstance(rng, (int, np.integer)):
        return RngStream(0 if rng is None else int(rng)).gen
    raise TypeError(f"cannot build a generator from {type(rng).__name__}")

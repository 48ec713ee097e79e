"""Replayable random streams.

Every stochastic operation in the package draws from a (seed, stream) pair.
Identical pairs produce identical sequences, which is what the federated vs.
centralized equivalence checks and the pipeline determinism guarantee rest on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix64(x: int) -> int:
    """splitmix64 finalizer; avalanches a 64-bit value."""
    x = (x + _GOLDEN) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


@dataclass(frozen=True)
class RngHandle:
    """Seed plus stream id; fully determines a draw sequence."""

    seed: int
    stream: int = 0

    def __post_init__(self):
        if not 0 <= self.seed <= _MASK64:
            raise ValueError("seed must fit in 64 unsigned bits")
        if not 0 <= self.stream <= _MASK64:
            raise ValueError("stream must fit in 64 unsigned bits")

    def generator(self) -> np.random.Generator:
        """Fresh counter-based generator for this (seed, stream)."""
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream,))
        return np.random.Generator(np.random.Philox(seq))

    def child(self, index: int) -> "RngHandle":
        """Derived handle; distinct indices give independent streams."""
        if index < 0:
            raise ValueError("child index must be nonnegative")
        return RngHandle(self.seed, _mix64(self.stream ^ _mix64(index)))


def as_generator(rng: "RngHandle | np.random.Generator") -> np.random.Generator:
    """Accept a handle (pure) or an already-open generator (stateful)."""
    if isinstance(rng, RngHandle):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngHandle or numpy Generator, got {type(rng)!r}")

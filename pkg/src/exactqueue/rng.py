"""Role-keyed random streams.

Each replication owns one counter-based generator per role, derived from
``(seed, replication, role)``.  Keeping roles apart means that, for example,
extra proposal draws never shift the arrival or service sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ROLES = ("arrival", "service", "routing", "proposal", "forward", "tail")


def stream(seed: int, replication: int, role: str) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(replication), ROLES.index(role)))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class Streams:
    arrival: np.random.Generator
    service: np.random.Generator
    routing: np.random.Generator
    proposal: np.random.Generator
    forward: np.random.Generator
    tail: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int, replication: int = 0) -> "Streams":
        return cls(*(stream(seed, replication, r) for r in ROLES))

    @classmethod
    def from_generator(cls, rng: np.random.Generator) -> "Streams":
        return cls(*rng.spawn(len(ROLES)))


def as_streams(source) -> Streams:
    """Accept a Streams bundle, an integer seed, a Generator, or None."""
    if isinstance(source, Streams):
        return source
    if source is None:
        return Streams.from_generator(np.random.default_rng())
    if isinstance(source, np.random.Generator):
        return Streams.from_generator(source)
    return Streams.from_seed(int(source))

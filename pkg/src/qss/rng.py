"""Per-party random streams derived from one master seed.

Every party (and the channel emulator) draws only from its own stream, so a
networked run and an in-process run with the same master seed make exactly
the same draws in the same order.
"""

from __future__ import annotations

import numpy as np

STREAM_NAMES = ("sara", "alice", "bob", "channel", "dealer", "adversary")


def stream(seed: int, name: str) -> np.random.Generator:
    children = np.random.SeedSequence(seed).spawn(len(STREAM_NAMES))
    return np.random.default_rng(children[STREAM_NAMES.index(name)])


class SessionRngs:
    def __init__(self, seed: int):
        self.seed = seed
        children = np.random.SeedSequence(seed).spawn(len(STREAM_NAMES))
        for name, child in zip(STREAM_NAMES, children):
            setattr(self, name, np.random.default_rng(child))

    def for_role(self, role) -> np.random.Generator:
        return getattr(self, role.value)

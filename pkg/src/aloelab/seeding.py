"""Derivation of independent child seeds from a master seed.

Every stochastic component (dataset, shuffle stream, per-item attack
start) gets its own stream derived from (master, tag...) so that adding
or removing one consumer never shifts another's draws.
"""

from __future__ import annotations

import numpy as np


def child_seed(*parts: int) -> int:
    """A stable 64-bit seed derived from a tuple of integers."""
    ss = np.random.SeedSequence([int(p) & 0xFFFFFFFF for p in parts])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def child_rng(*parts: int) -> np.random.Generator:
    return np.random.default_rng(child_seed(*parts))

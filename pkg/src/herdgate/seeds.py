"""Deterministic seed derivation.

Every stochastic stage receives its own seed derived from a master seed and a
path of labels, e.g. ``derive(42, "tune", "split", 3)``. Labels are hashed with
BLAKE2b so the mapping is stable across platforms and Python versions, then
mixed through :class:`numpy.random.SeedSequence`.
"""
from __future__ import annotations

import hashlib

import numpy as np


def _label_word(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & 0xFFFFFFFF
    digest = hashlib.blake2b(str(label).encode("utf-8"), digest_size=4).digest()
    return int.from_bytes(digest, "little")


def derive(master: int, *path) -> int:
    """Return a 64-bit seed for the stage named by ``path``."""
    words = [int(master) & 0xFFFFFFFF, (int(master) >> 32) & 0xFFFFFFFF]
    words += [_label_word(p) for p in path]
    state = np.random.SeedSequence(words).generate_state(2, dtype=np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


def rng(master: int, *path) -> np.random.Generator:
    return np.random.default_rng(derive(master, *path))

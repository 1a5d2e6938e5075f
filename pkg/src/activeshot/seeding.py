"""Deterministic RNG stream derivation.

Every random decision in the package draws from a generator derived from
the run seed plus a stable purpose tag, so concurrent or reordered work
cannot change any stream's contents.
"""
from __future__ import annotations

import zlib

import numpy as np


def _code(tag: int | str) -> int:
    if isinstance(tag, str):
        return zlib.crc32(tag.encode())
    return int(tag)


def derive_rng(seed: int, *tags: int | str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *(_code(t) for t in tags)]))

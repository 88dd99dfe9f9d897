"""Deterministic random-stream derivation.

Every random draw in the library flows from a single 64-bit root seed.
Consumers derive independent child streams by name, so adding a new
consumer (or reordering draws inside one) never perturbs the streams seen
by any other consumer.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["derive_seed_sequence", "stream"]


def _key_part(part: int | str) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part) & 0xFFFFFFFF


def derive_seed_sequence(seed: int, *path: int | str) -> np.random.SeedSequence:
    """Child seed sequence for the consumer identified by ``path``."""
    return np.random.SeedSequence(entropy=seed, spawn_key=tuple(_key_part(p) for p in path))


def stream(seed: int, *path: int | str) -> np.random.Generator:
    """Generator for the named consumer, e.g. ``stream(seed, "train", "noise")``."""
    return np.random.default_rng(derive_seed_sequence(seed, *path))

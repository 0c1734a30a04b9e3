"""Seeded random streams.

All randomness comes from numpy's Philox4x64 counter-based generator. A root
seed is split per component by hashing the component label into the
SeedSequence spawn key, so streams are independent of call order and
identical across platforms.
"""
import hashlib

import numpy as np


def component_key(label: str) -> int:
    return int.from_bytes(hashlib.sha256(label.encode()).digest()[:8], "little")


def make_generator(seed: int, *labels: str) -> np.random.Generator:
    """Philox stream for ``seed`` split by a path of component labels."""
    if seed < 0:
        raise ValueError("seed must be a non-negative integer")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(component_key(l) for l in labels))
    return np.random.Generator(np.random.Philox(ss))

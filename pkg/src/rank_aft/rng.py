"""Seeded random streams for reproducible resampling and simulation.

Every stream is a counter-based Philox generator keyed by
``(seed, tag, index)``, so draw ``r`` of a loop is the same no matter
which worker thread evaluates it or in which order.
"""

import zlib

import numpy as np

TAG_OMEGA = "omega"
TAG_SLOPE = "slope"
TAG_REPLICATE = "replicate"
TAG_PILOT = "pilot"


def _tag_key(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def stream(seed: int, tag: str, index: int = 0) -> np.random.Generator:
    """Independent generator for one replicate of one purpose"""
    if seed < 0 or index < 0:
        raise ValueError("seed and index must be nonnegative")
    sequence = np.random.SeedSequence([int(seed), _tag_key(tag), int(index)])
    return np.random.Generator(np.random.Philox(sequence))


def derive_seed(seed: int, tag: str, index: int = 0) -> int:
    """Integer seed for a child task, stable across runs"""
    sequence = np.random.SeedSequence([int(seed), _tag_key(tag), int(index)])
    return int(sequence.generate_state(1, dtype=np.uint32)[0])

"""Named, reproducible random substreams derived from one integer seed."""

from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, name: str, *index: int) -> np.random.Generator:
    """Generator for ``(seed, name, *index)``.

    Streams with different names or indices are statistically independent,
    so e.g. the mask and the sampler noise can be varied one at a time.
    """
    key = [int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode())] + [int(i) for i in index]
    return np.random.default_rng(np.random.SeedSequence(key))


def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Circular complex Gaussian with ``E|z|^2 = 1`` per entry."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)

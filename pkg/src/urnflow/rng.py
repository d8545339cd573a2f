"""Reproducible random-number streams.

Every stochastic routine takes a 64-bit ``seed``; replica ``r`` of an
ensemble draws from the substream keyed by ``(seed, r)``.  Substreams are
statistically independent and stable across platforms and process counts,
so ensemble results depend only on ``(seed, replica index)``.
"""

from __future__ import annotations

import numpy as np

__all__ = ["substream"]


def substream(seed: int, replica: int = 0) -> np.random.Generator:
    """Generator for the substream keyed by (seed, replica)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, replica])))

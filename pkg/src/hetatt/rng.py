"""Seeded random streams.

Every random draw in the package flows from a single integer seed through
named sub-streams, so reordering work in one stream never perturbs another.
"""

from __future__ import annotations

import numpy as np

STREAMS = {"init": 0, "dropout": 1, "data-order": 2}


def derive_rng(seed: int, stream: str) -> np.random.Generator:
    """Return the generator for one named sub-stream of ``seed``."""
    if stream not in STREAMS:
        raise ValueError(f"unknown random stream {stream!r}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(STREAMS[stream],))
    return np.random.Generator(np.random.PCG64(ss))

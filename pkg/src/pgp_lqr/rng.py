"""Seeded random streams.

All randomness flows from a master seed through numpy's Philox4x64
counter-based generator keyed by ``SeedSequence(seed, spawn_key=stream)``.
A stream tuple such as ``(estimate_index, sample_index)`` therefore gives a
reproducible, schedule-independent sub-stream.
"""
import numpy as np


def make_rng(seed, *stream):
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(seq))


def child_seed(rng):
    """Draw a fresh 63-bit seed from ``rng`` (for handing to sub-components)."""
    return int(rng.integers(0, 2**63 - 1))

"""Deterministic seed derivation.

All randomness in the pipeline flows from a single root seed.  Each stage
(or stream within a stage) derives its own seed from the root seed and a
short label, so re-running one stage in isolation sees exactly the RNG
stream it saw during a full run.
"""

from __future__ import annotations

import zlib

import numpy as np


def derive_seed(root_seed: int, label: str) -> int:
    """Derive a 32-bit child seed from ``root_seed`` and a stream label."""
    return zlib.crc32(label.encode("utf-8"), root_seed & 0xFFFFFFFF)


def stage_rng(root_seed: int, label: str) -> np.random.Generator:
    """Generator seeded for one named stream of the pipeline."""
    return np.random.default_rng(derive_seed(root_seed, label))

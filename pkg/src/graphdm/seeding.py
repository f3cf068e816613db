"""Named substreams derived from a single master seed.

Every source of randomness in the package draws from a generator obtained
through `substream(master_seed, name)`.  Two runs with the same master seed
and the same stream names therefore consume identical random sequences, no
matter how unrelated parts of the pipeline are reordered.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream_seed(master_seed: int, name: str) -> int:
    """Stable 128-bit seed for the named substream of a master seed."""
    digest = hashlib.sha256(f"{master_seed}:{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:16], "little")


def substream(master_seed: int, name: str) -> np.random.Generator:
    """Independent generator for the named substream of a master seed."""
    return np.random.default_rng(stream_seed(master_seed, name))

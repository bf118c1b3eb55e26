"""Deterministic random streams derived from one root seed.

Every random draw in the pipeline flows through a named substream so that
unrelated components never share (or perturb) each other's randomness: two
runs with the same root seed are reproducible, and enabling or disabling one
component leaves the draws of all others untouched.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _token(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & 0xFFFFFFFFFFFFFFFF
    digest = hashlib.sha256(str(label).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(root_seed: int, *labels) -> np.random.Generator:
    """Generator for the substream named by ``labels`` under ``root_seed``."""
    seq = np.random.SeedSequence([int(root_seed) & 0xFFFFFFFFFFFFFFFF] + [_token(x) for x in labels])
    return np.random.Generator(np.random.PCG64(seq))

"""Deterministic seed derivation.

All randomness in a run flows from one master seed.  Sub-seeds are derived
by hashing the master seed together with a path of names, so adding a new
consumer never perturbs existing ones and a single flag reproduces a run.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master: int, *names: object) -> int:
    """Stable 63-bit sub-seed for the given derivation path."""
    key = f"{master}/" + "/".join(str(n) for n in names)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


def derive_rng(master: int, *names: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *names))

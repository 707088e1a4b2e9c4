"""Per-stage seed derivation.

Every stochastic stage gets its own seed by hashing the stage path into the
root seed, so sub-runs stay reproducible in isolation.
"""

import hashlib
import json

import numpy as np


def derive_seed(root, *stage):
    """Return a 32-bit seed derived from ``root`` and a stage path."""
    key = json.dumps([int(root), *[str(s) for s in stage]]).encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:4], "little")


def rng_for(root, *stage):
    return np.random.default_rng(derive_seed(root, *stage))


def digest(obj):
    """sha256 hex of the canonical JSON form of ``obj``."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()

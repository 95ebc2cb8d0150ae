"""Deterministic random streams.

All randomness in the project flows from one root seed through named
substreams, so any component (data synthesis, parameter init, batch
shuffling, corruption) can be reproduced in isolation.
"""
from __future__ import annotations

import hashlib

import numpy as np
import torch


def substream(root_seed: int, *names) -> int:
    """Derive a child seed from a root seed and a path of stream names."""
    key = "/".join(str(part) for part in (root_seed, *names))
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def np_rng(root_seed: int, *names) -> np.random.Generator:
    return np.random.default_rng(substream(root_seed, *names))


def torch_generator(root_seed: int, *names) -> torch.Generator:
    gen = torch.Generator()
    # manual_seed wants a signed 64-bit value
    gen.manual_seed(substream(root_seed, *names) & 0x7FFF_FFFF_FFFF_FFFF)
    return gen


def string_vector(surface: str, dim: int, scale: float = 0.1, salt: str = "surface") -> np.ndarray:
    """Fixed pseudo-random embedding for an arbitrary string.

    Deterministic across processes and platforms; used for copy-candidate
    surfaces and raw feature codebooks, which must agree between data
    generation time and model time without any shared state.
    """
    digest = hashlib.sha256(f"{salt}\x00{surface}".encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    return (rng.standard_normal(dim) * scale).astype(np.float64)

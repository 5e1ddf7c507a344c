"""Deterministic seed splitting for Monte Carlo workers.

Every replicate draws from its own stream, derived from (seed, index) by an
XOR fold through splitmix64.  The rule is part of the reproducibility
contract: reports and CSV outputs are byte-identical for a given seed no
matter how replicates are scheduled.
"""
from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One splitmix64 scramble step (public-domain mix function)."""
    x = (x + _GOLDEN) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return (z ^ (z >> 31)) & _MASK


def derive_seed(seed: int, index: int) -> int:
    """Sub-seed for worker `index`: fold the scrambled index into the seed."""
    return splitmix64((seed & _MASK) ^ splitmix64(index & _MASK))


def rng_for(seed: int, index: int = 0) -> np.random.Generator:
    """Generator for one replicate stream."""
    return np.random.default_rng(derive_seed(seed, index))

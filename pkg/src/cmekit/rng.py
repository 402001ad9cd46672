"""Deterministic seed derivation and generator construction.

All randomness in the package flows through numpy's PCG64 generator, seeded
either directly or with seeds derived from a master seed via splitmix64.
Derived seeds let independent units of work (bootstrap replicates, folds,
bench cells) get decorrelated streams while staying reproducible.
"""

from __future__ import annotations

import numpy as np

__all__ = ["splitmix64", "derive_seed", "make_rng"]

_MASK64 = (1 << 64) - 1


def splitmix64(state: int) -> int:
    """One splitmix64 mixing step (Steele, Lea & Flood constants).

    Maps a 64-bit state to a well-distributed 64-bit output.
    """
    z = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def derive_seed(master: int, index: int) -> int:
    """Derive the ``index``-th child seed from a master seed.

    Defined as ``splitmix64(master XOR index)``; distinct indices give
    distinct inputs to the mixer, so streams are decorrelated.
    """
    return splitmix64((int(master) ^ int(index)) & _MASK64)


def make_rng(seed: int) -> np.random.Generator:
    """A PCG64 generator for the given seed."""
    return np.random.Generator(np.random.PCG64(int(seed) & _MASK64))

"""Deterministic 64-bit mixing for seeds and counter-based random bits.

All randomness in this package is derived from explicit integer seeds so
that every run is reproducible bit-for-bit.  Two primitives are exposed:

* ``mix64`` -- the splitmix64 finalizer, a bijective avalanche mix on
  64-bit integers.
* ``derive_seed`` -- combines a base seed with a stream identifier
  (chain id, pilot id, ...) into an independent 64-bit stream seed.

Site-update bits are drawn by hashing (stream seed, flat counter)
through the same finalizer; the numba kernels replicate the constants
below with native uint64 wraparound.
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1

# splitmix64 constants (Steele, Lea, Flood 2014).
GOLDEN = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    """Apply the splitmix64 finalizer to a 64-bit integer."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, stream: int) -> int:
    """Derive an independent stream seed: mix64(seed XOR mix64(stream + phi)).

    The inner mix decorrelates consecutive stream ids; the outer mix
    decorrelates nearby base seeds.  Used to give every chain its own
    bit stream from one run-level seed.
    """
    return mix64((seed ^ mix64((stream + GOLDEN) & MASK64)) & MASK64)


def counter_bit(stream_seed: int, counter: int) -> int:
    """Uniform bit indexed by (stream seed, counter); no state is stored.

    Bit = top bit of mix64(stream_seed + counter * GOLDEN).  The same
    formula is inlined in the numba sweep kernels, which lets
    coupling-from-the-past re-derive the bits of any past sweep instead
    of storing them.
    """
    return mix64((stream_seed + counter * GOLDEN) & MASK64) >> 63

"""Counter-based deterministic random streams.

Every random quantity in the simulators is a pure function of a 64-bit
key tuple ``(seed, tag, a, b)``.  There is no sequential generator state,
so the same instruction stack can be replayed under any toppling order,
and independent runs can be farmed out to workers without coordination.
The mixer is a chained splitmix64 finalizer, which avalanches well and is
more than adequate for the statistical tests performed here.

Stream tags keep the different arrays of randomness (sleep instructions,
jump directions, loop colours, excursion shapes, ...) independent of one
another even when they share a site index and a height.
"""

import numpy as np
from numba import njit, uint64

U64_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)
GOLDEN = np.uint64(0x9E3779B97F4A7C15)
MIX_A = np.uint64(0xBF58476D1CE4E5B9)
MIX_B = np.uint64(0x94D049BB133111EB)

# Stream tags.  The excursion tag must stay the largest because colour
# indices are added to it (TAG_GAMMA + j) to key per-colour loop shapes.
TAG_REF_INSTR = 1   # reference model: sleep-or-jump decision at (site, h)
TAG_LOOP_I = 3      # loop model: sleep-or-loop decision I(x, h)
TAG_LOOP_J = 4      # loop model: loop colour J(x, l)
TAG_WALK = 5        # generic excursion streams (walk module)
TAG_CELL = 6        # per-cell seed derivation in sweeps / CLI
TAG_GAMMA = 64      # loop model: excursion shape key for (x, l, colour j)


@njit(uint64(uint64), cache=True, inline="always")
def mix64(z):
    z = (z ^ (z >> uint64(30))) * uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> uint64(27))) * uint64(0x94D049BB133111EB)
    return z ^ (z >> uint64(31))


@njit(uint64(uint64, uint64, uint64, uint64), cache=True, inline="always")
def keyed_u64(seed, tag, a, b):
    """Uniform 64-bit word, a pure function of the key tuple."""
    z = seed + (tag + uint64(1)) * uint64(0x9E3779B97F4A7C15)
    z = mix64(z ^ ((a + uint64(1)) * uint64(0xBF58476D1CE4E5B9)))
    z = mix64(z ^ ((b + uint64(1)) * uint64(0x94D049BB133111EB)))
    return z


@njit(uint64(uint64), cache=True, inline="always")
def xorshift_next(state):
    """One step of xorshift64*; used inside a single keyed excursion."""
    state ^= state >> uint64(12)
    state ^= (state << uint64(25)) & uint64(0xFFFFFFFFFFFFFFFF)
    state ^= state >> uint64(27)
    return state


@njit(uint64(uint64), cache=True, inline="always")
def xorshift_out(state):
    return (state * uint64(0x2545F4914F6CDD1D)) & uint64(0xFFFFFFFFFFFFFFFF)


def sleep_threshold(lam: float) -> np.uint64:
    """uint64 threshold t with P(u < t) = lam / (1 + lam) for uniform u."""
    if lam < 0:
        raise ValueError("sleep rate must be nonnegative")
    frac = lam / (1.0 + lam)
    t = int(frac * 2.0**64)
    return np.uint64(min(t, 2**64 - 1))


def trailing_zeros(v: int) -> int:
    """Number of trailing zero bits; geometric(1/2) minus one on uniforms."""
    v = int(v)
    if v == 0:
        return 64
    return (v & -v).bit_length() - 1


def derive_seed(master: int, tag: int, a: int = 0, b: int = 0) -> int:
    """Stable sub-seed for a cell of a larger experiment."""
    return int(keyed_u64(np.uint64(master), np.uint64(tag),
                         np.uint64(a), np.uint64(b)))


def u64(seed: int, tag: int, a: int = 0, b: int = 0) -> int:
    """Python-facing wrapper around the keyed mixer."""
    return int(keyed_u64(np.uint64(seed), np.uint64(tag),
                         np.uint64(a), np.uint64(b)))

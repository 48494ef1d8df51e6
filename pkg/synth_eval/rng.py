"""
Seeded randomness for synth-eval

All randomness flows from a 64-bit seed through numpy's counter-based Philox
bit generator. Gaussian variates use the Box-Muller transform on Philox
uniforms so that values depend only on the documented algorithm, not on
numpy's internal normal sampler.
"""

import numpy as np

SEED_MASK = (1 << 64) - 1


def make_rng(seed: int) -> np.random.Generator:
    """Generator over Philox keyed by ``seed`` (reduced mod 2**64)."""
    return np.random.Generator(np.random.Philox(key=int(seed) & SEED_MASK))


def split_seed(seed: int, index: int) -> int:
    """Derive the seed of sub-stream ``index``: seed XOR index, mod 2**64."""
    return (int(seed) ^ int(index)) & SEED_MASK


def gaussian(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard normal variates via Box-Muller."""
    n = int(np.prod(shape, dtype=np.int64))
    pairs = (n + 1) // 2
    u1 = 1.0 - rng.random(pairs)  # (0, 1], keeps log finite
    u2 = rng.random(pairs)
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    z = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])
    return z[:n].reshape(shape)


def unit_vector(rng: np.random.Generator, dim: int) -> np.ndarray:
    """Random direction uniformly distributed on the unit sphere."""
    v = gaussian(rng, (dim,))
    return v / np.linalg.norm(v)

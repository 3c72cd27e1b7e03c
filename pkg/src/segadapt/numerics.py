"""Dense float64 numerics: stable softmax, sphere sampling, seeded RNG streams.

Everything here operates on plain ``numpy.float64`` arrays. Random state is
counter-based (Philox) so that independently named streams drawn from one
seed are reproducible regardless of how much any other stream consumed.
"""

from __future__ import annotations

import zlib

import numpy as np

from .errors import InvalidInputError


def softmax(logits, axis: int = -1) -> np.ndarray:
    """Stable softmax along ``axis`` via max subtraction.

    Raises :class:`InvalidInputError` on non-finite input. Output rows are
    non-negative and sum to 1 along ``axis`` to within 1e-9.
    """
    x = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("softmax input contains non-finite entries")
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_sum_exp(x, axis: int = -1) -> np.ndarray:
    """log(sum(exp(x))) with max subtraction; tolerates -inf entries."""
    x = np.asarray(x, dtype=np.float64)
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


def sample_unit_directions(count: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``count`` directions uniform on the unit sphere in ``dim`` dimensions.

    Rows are independent standard-normal vectors normalized to unit Euclidean
    norm; zero-norm draws are redrawn. Drawing n directions then m > n
    directions from identically seeded generators yields a common prefix,
    which keeps runs with different projection counts comparable.
    """
    if count < 1 or dim < 1:
        raise InvalidInputError(f"count and dim must be >= 1, got {count}, {dim}")
    raw = rng.standard_normal((count, dim))
    norms = np.linalg.norm(raw, axis=1)
    while np.any(norms == 0.0):  # probability ~0, but the contract demands a redraw
        bad = norms == 0.0
        raw[bad] = rng.standard_normal((int(bad.sum()), dim))
        norms = np.linalg.norm(raw, axis=1)
    return raw / norms[:, None]


class SeedStreams:
    """Named, counter-based random streams derived from one 64-bit seed.

    ``streams.generator("batch")`` always yields the same Philox-backed
    generator for a given (seed, name, index), independent of every other
    stream. Used throughout training so that, e.g., changing the number of
    SWD projections does not perturb batch order or GMM sampling.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)

    def generator(self, name: str, index: int = 0) -> np.random.Generator:
        key = (zlib.crc32(name.encode("utf-8")), int(index))
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=key)
        return np.random.Generator(np.random.Philox(seq))

    def __repr__(self) -> str:
        return f"SeedStreams(seed={self.seed})"

"""Counter-based splittable PRNG with Box-Muller Gaussian sampling.

Every random draw in this package flows through `Rng`, a stateless-core,
counter-based 64-bit generator: draw k is `mix64(key + (k+1)*GOLDEN)` where
the key is derived from (seed, stream) and `mix64` is the splitmix64 output
permutation. Consequences we rely on everywhere:

* identical (seed, stream) reproduce identical sequences on a given build;
* streams are cheap to derive (`Rng.split`), so each (run, layer, purpose)
  gets its own stream and adding a new consumer never perturbs existing draws;
* draws are indexed, not chained, so vectorized generation is exact.

Gaussians come from the Box-Muller transform on pairs of uniforms, both
branches used. Bit-reproducibility is promised within this repo only, not
across languages or PRNG rewrites.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)  # splitmix64 increment
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_FNV_OFFSET = np.uint64(0xCBF29CE484222325)
_FNV_PRIME = np.uint64(0x100000001B3)

_U64 = np.uint64
_TWO53_INV = 1.0 / float(1 << 53)


def _mix64(z: np.ndarray) -> np.ndarray:
    """splitmix64 output permutation, vectorized over uint64 arrays."""
    z = z.astype(np.uint64, copy=True)
    z ^= z >> _U64(30)
    z *= _MIX1
    z ^= z >> _U64(27)
    z *= _MIX2
    z ^= z >> _U64(31)
    return z


def _fold(acc: np.uint64, part) -> np.uint64:
    """Fold one split label (int or str) into a stream id."""
    if isinstance(part, str):
        h = _FNV_OFFSET
        for b in part.encode("utf8"):
            h = np.uint64((int(h) ^ b) * int(_FNV_PRIME) & 0xFFFFFFFFFFFFFFFF)
        part_u = h
    elif isinstance(part, (int, np.integer)):
        part_u = np.uint64(int(part) & 0xFFFFFFFFFFFFFFFF)
    else:
        raise TypeError(f"split labels must be int or str, got {type(part).__name__}")
    mixed = _mix64(np.array([acc ^ part_u], dtype=np.uint64))[0]
    return np.uint64(mixed)


class Rng:
    """Deterministic counter-based generator identified by (seed, stream)."""

    __slots__ = ("seed", "stream", "_key", "_counter")

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream = int(stream) & 0xFFFFFFFFFFFFFFFF
        seed_k = _mix64(np.array([self.seed], dtype=np.uint64))[0]
        stream_k = _mix64(np.array([np.uint64(self.stream) ^ _GOLDEN], dtype=np.uint64))[0]
        self._key = np.uint64(seed_k ^ stream_k)
        self._counter = 0

    def split(self, *labels) -> "Rng":
        """Child generator on an independent stream derived from labels.

        Labels may be ints or strings; the same (seed, stream, labels)
        always yield the same child stream.
        """
        acc = np.uint64(self.stream)
        for part in labels:
            acc = _fold(acc, part)
        return Rng(self.seed, int(acc))

    def next_u64(self, count: int) -> np.ndarray:
        """Next `count` raw 64-bit draws."""
        if count < 0:
            raise ValueError("count must be nonnegative")
        idx = np.arange(self._counter + 1, self._counter + count + 1, dtype=np.uint64)
        self._counter += count
        with np.errstate(over="ignore"):
            return _mix64(self._key + idx * _GOLDEN)

    def uniform(self, count: int) -> np.ndarray:
        """`count` uniforms in [0, 1) with 53-bit resolution."""
        bits = self.next_u64(count)
        return (bits >> _U64(11)).astype(np.float64) * _TWO53_INV

    def normal(self, shape) -> np.ndarray:
        """Standard normal array via Box-Muller (both branches)."""
        shape = (shape,) if isinstance(shape, (int, np.integer)) else tuple(shape)
        total = int(np.prod(shape)) if shape else 1
        pairs = (total + 1) // 2
        bits = self.next_u64(2 * pairs)
        # u1 in (0, 1] so log stays finite; u2 in [0, 1).
        u1 = ((bits[:pairs] >> _U64(11)).astype(np.float64) + 1.0) * _TWO53_INV
        u2 = (bits[pairs:] >> _U64(11)).astype(np.float64) * _TWO53_INV
        r = np.sqrt(-2.0 * np.log(u1))
        theta = (2.0 * np.pi) * u2
        out = np.empty(2 * pairs, dtype=np.float64)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:total].reshape(shape)


def gaussian_matrix(rng: Rng, rows: int, cols: int, variance: float) -> np.ndarray:
    """(rows, cols) matrix of i.i.d. N(0, variance) entries.

    variance 0 gives an exactly-zero matrix; negative variance is a
    configuration error.
    """
    if rows < 1 or cols < 1:
        raise ValueError(f"matrix dims must be >= 1, got {rows}x{cols}")
    if variance < 0:
        raise ValueError(f"variance must be nonnegative, got {variance}")
    if variance == 0:
        return np.zeros((rows, cols), dtype=np.float64)
    return rng.normal((rows, cols)) * np.sqrt(variance)

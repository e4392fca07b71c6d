"""Seeded hash functions, sampling probabilities and the guess ladder.

Every random choice in the package is a pure function of a 64-bit seed and a
label path, so replaying a stream reproduces the same sketch state.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import Params

MASK64 = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def derive_seed(seed: int, *labels) -> int:
    """Deterministic 64-bit sub-seed for a named random stream."""
    text = "|".join([str(int(seed))] + [str(x) for x in labels])
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "little")


def mix64(x: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer, elementwise over uint64."""
    # array arithmetic on uint64 wraps silently
    x = np.asarray(x, dtype=np.uint64)
    x = x ^ (x >> np.uint64(30))
    x *= _M1
    x ^= x >> np.uint64(27)
    x *= _M2
    x ^= x >> np.uint64(31)
    return x


class KeyedHash:
    """Keyed mixing function from uint64 keys to uint64 outputs.

    The sampling PRF uses 4 rounds; bucket hashes inside sketches use 2.
    """

    def __init__(self, seed: int, rounds: int = 4):
        self.seed = int(seed)
        self._rk = [np.uint64(derive_seed(self.seed, "round", r)) for r in range(rounds)]

    def __call__(self, keys) -> np.ndarray:
        x = np.array(keys, dtype=np.uint64)
        for rk in self._rk:
            x ^= rk
            x += _GOLDEN
            x = mix64(x)
        return x


def threshold64(pi: float) -> int | None:
    """floor(pi * 2^64), or None when every key passes."""
    if pi >= 1.0:
        return None
    t = int(math.ldexp(pi, 64))
    return None if t > MASK64 else t


@dataclass(frozen=True)
class SampleHash:
    """The sampling hash h_{o,i}: point key -> {0, 1}."""

    seed: int
    o_index: int
    level: int

    def _prf(self) -> KeyedHash:
        return KeyedHash(derive_seed(self.seed, "sample", self.o_index, self.level))

    def bits(self, point_keys, pi: float) -> np.ndarray:
        keys = np.asarray(point_keys, dtype=np.uint64)
        t = threshold64(pi)
        if t is None:
            return np.ones(keys.shape, dtype=bool)
        return self._prf()(keys) < np.uint64(t)


def sample_bit(h: SampleHash, point_key: int, pi: float) -> int:
    return int(h.bits(np.array([point_key], dtype=np.uint64), pi)[0])


class GuessLadder:
    """Guesses o = 2^j for j = 0..J, with 2^J the first power >= sqrt(d) * side^(d+1).

    Values are kept as exponents; Python integers hold them exactly.
    """

    def __init__(self, d: int, side: int):
        self.d = d
        self.side = side
        target = d * side ** (2 * (d + 1))
        j = 0
        while 4**j < target:
            j += 1
        self.exponents = list(range(j + 1))

    def __len__(self) -> int:
        return len(self.exponents)

    def __iter__(self):
        return iter(self.values)

    @property
    def values(self) -> list[int]:
        return [1 << j for j in self.exponents]

    def log(self, index: int) -> float:
        return self.exponents[index] * math.log(2.0)


def _clamp(log_value: float) -> float:
    if log_value >= 0.0:
        return 1.0
    # probabilities below 2^-64 cannot be resolved by the PRF threshold anyway
    return max(math.exp(log_value), 2.0**-64)


def _log_o(o) -> float:
    if o < 1:
        raise ValueError("guess o must be >= 1")
    return math.log(o)


def pi_general(params: Params, i: int, o) -> float:
    """Per-level sampling probability of the general construction.

    min(c (L+1)^2 side d^2 / (2^i eps^2 o) * ln(2 (L+1) side^(kd) / rho), 1)
    with c = lambdas.general * constant_scale.
    """
    L, side, d, k = params.L, params.side, params.d, params.k
    if not 0 <= i <= L:
        raise ValueError("level out of range")
    inner = math.log(2.0) + math.log(L + 1) + k * d * math.log(side) - math.log(params.rho)
    c = params.lambdas.general * params.constant_scale
    log_value = (
        math.log(c)
        + 2 * math.log(L + 1)
        + math.log(side)
        + 2 * math.log(d)
        - i * math.log(2.0)
        - 2 * math.log(params.eps)
        - _log_o(o)
        + math.log(inner)
    )
    return _clamp(log_value)


def pi_positive(params: Params, level: int, o) -> float:
    """Per-level sampling probability of the non-negative construction; 1 at the root."""
    L, side, d, k = params.L, params.side, params.d, params.k
    if not -1 <= level <= L:
        raise ValueError("level out of range")
    if level == -1:
        return 1.0
    Lp = max(L, 1)
    eps, rho = params.eps, params.rho
    lam = params.lambdas
    log1 = math.log(2.0 * Lp / rho) + d * k * math.log(side)
    log2 = math.log(30.0 * k * Lp * Lp / rho**2)
    scale = 2.0**-level / (eps * eps)
    term = lam.l3 * d * d * side * Lp * Lp * scale * log1 + lam.l4 * d * d * k * Lp**3 * side * scale / rho * log2
    log_value = math.log(params.constant_scale * term) - _log_o(o)
    return _clamp(log_value)


def point_keys(points: np.ndarray, side: int) -> np.ndarray:
    """Pack integer points in [1, side]^d into uint64 keys (row-major, L bits per axis)."""
    pts = np.asarray(points, dtype=np.int64)
    if pts.ndim == 1:
        pts = pts[None, :]
    bits = max((side - 1).bit_length(), 1)
    if bits * pts.shape[1] > 62:
        raise ValueError("point keys need more than 62 bits; reduce d or delta")
    key = np.zeros(pts.shape[0], dtype=np.uint64)
    for j in range(pts.shape[1]):
        key |= (pts[:, j] - 1).astype(np.uint64) << np.uint64(bits * j)
    return key


def points_from_keys(keys, d: int, side: int) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.uint64)
    bits = max((side - 1).bit_length(), 1)
    mask = np.uint64((1 << bits) - 1)
    out = np.empty((keys.shape[0], d), dtype=np.int64)
    for j in range(d):
        out[:, j] = ((keys >> np.uint64(bits * j)) & mask).astype(np.int64) + 1
    return out


def as_u64(values: Sequence[int]) -> np.ndarray:
    return np.asarray(values, dtype=np.uint64)

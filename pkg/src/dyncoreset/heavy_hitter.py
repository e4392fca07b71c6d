"""Count-sketch l2 heavy hitters for turnstile streams.

Estimates are the median over rows of the signed bucket counter. Queries
score a candidate key set (by default the whole universe when it is small)
and order the heavy ones by estimate, ties broken by ascending key.
"""

from __future__ import annotations

import math

import numpy as np

from .hashing import KeyedHash, derive_seed
from .kset import _pack, _unpack

ENUMERATION_LIMIT = 1 << 22
TABLE_LIMIT = 1 << 26


class SketchTooLarge(ValueError):
    """The requested sketch would not fit in memory."""


class HitList(list):
    """(key, estimate) pairs ordered by estimate descending, then key ascending."""

    def top(self, m: int) -> "HitList":
        return HitList(self[: max(int(m), 0)])

    def key_list(self) -> list[int]:
        return [k for k, _ in self]

    def as_dict(self) -> dict[int, int]:
        return dict(self)


def rank(keys: np.ndarray, est: np.ndarray) -> HitList:
    order = np.lexsort((keys, -est))
    return HitList((int(keys[j]), int(est[j])) for j in order)


class HeavyHitterSketch:
    def __init__(
        self,
        universe: int,
        k: float,
        eps: float,
        delta: float = 0.05,
        seed: int = 0,
        width: int | None = None,
        width_factor: float = 4.0,
        scale: float = 1.0,
    ):
        if universe < 1 or k <= 0 or eps <= 0 or not 0 < delta < 1:
            raise ValueError("invalid heavy hitter parameters")
        self.universe = int(universe)
        self.k = float(k)
        self.eps = float(eps)
        self.delta = float(delta)
        self.seed = int(seed)
        rows = max(1, math.ceil(math.log(self.universe / self.delta)))
        self.rows = rows if rows % 2 else rows + 1
        if width is None:
            width = math.ceil(scale * width_factor * (self.k + 1.0 / self.eps**2))
        self.width = max(1, int(width))
        if self.rows * self.width > TABLE_LIMIT:
            raise SketchTooLarge(
                f"heavy hitter table of {self.rows}x{self.width} counters exceeds {TABLE_LIMIT}; "
                "lower constant_scale or the lambda constants")
        self.table = np.zeros((self.rows, self.width), dtype=np.int64)
        self._hash = KeyedHash(derive_seed(self.seed, "hh"), rounds=2)
        self._salt = np.array([derive_seed(self.seed, "hh-row", r) for r in range(self.rows)], dtype=np.uint64)
        self._base = (np.arange(self.rows, dtype=np.int64) * self.width)[:, None]

    def _locate(self, keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        h = self._hash(keys[None, :] ^ self._salt[:, None])
        buckets = (h % np.uint64(self.width)).astype(np.int64) + self._base
        signs = 1 - 2 * (h >> np.uint64(63)).astype(np.int64)
        return buckets, signs

    def update(self, key: int, op: int = 1) -> None:
        self.update_many(np.array([key], dtype=np.uint64), np.array([int(op)], dtype=np.int64))

    def update_many(self, keys, signs) -> None:
        keys = np.asarray(keys, dtype=np.uint64)
        if keys.size == 0:
            return
        signs = np.broadcast_to(np.asarray(signs, dtype=np.int64), keys.shape)
        buckets, hsign = self._locate(keys)
        np.add.at(self.table.reshape(-1), buckets.ravel(), (hsign * signs[None, :]).ravel())

    def merge(self, other: "HeavyHitterSketch") -> None:
        if (other.rows, other.width, other.seed) != (self.rows, self.width, self.seed):
            raise ValueError("can only merge sketches with identical parameters")
        self.table += other.table

    def estimate(self, keys) -> np.ndarray:
        keys = np.asarray(keys, dtype=np.uint64)
        if keys.size == 0:
            return np.zeros(0, dtype=np.int64)
        buckets, hsign = self._locate(keys)
        vals = self.table.reshape(-1)[buckets] * hsign
        mid = self.rows // 2
        return np.partition(vals, mid, axis=0)[mid]

    def f2_estimate(self) -> float:
        per_row = (self.table.astype(np.float64) ** 2).sum(axis=1)
        return float(np.median(per_row))

    def query(self, candidates=None) -> HitList:
        """Candidate keys that may satisfy f^2 >= F2 / k, best first.

        A key is kept when its estimate, padded by eps * sqrt(F2), reaches
        sqrt(F2 / k), so estimation error cannot drop a qualifying key.
        """
        if candidates is None:
            if self.universe > ENUMERATION_LIMIT:
                raise ValueError("universe too large to enumerate; pass candidates")
            candidates = np.arange(self.universe, dtype=np.uint64)
        keys = np.unique(np.asarray(candidates, dtype=np.uint64))
        est = self.estimate(keys)
        f2 = self.f2_estimate()
        threshold = math.sqrt(f2 / self.k) - self.eps * math.sqrt(f2)
        keep = (est > 0) & (est.astype(np.float64) >= threshold)
        return rank(keys[keep], est[keep])

    def is_zero(self) -> bool:
        return not self.table.any()

    @property
    def nbytes(self) -> int:
        return int(self.table.nbytes)

    def to_bytes(self) -> bytes:
        meta = {
            "kind": "hh",
            "universe": self.universe,
            "k": self.k,
            "eps": self.eps,
            "delta": self.delta,
            "seed": self.seed,
            "width": self.width,
        }
        return _pack(meta, {"table": self.table})

    @classmethod
    def from_bytes(cls, blob: bytes) -> "HeavyHitterSketch":
        meta, arrays = _unpack(blob)
        if meta.get("kind") != "hh":
            raise ValueError("not a heavy hitter snapshot")
        s = cls(meta["universe"], meta["k"], meta["eps"], meta["delta"], meta["seed"], width=meta["width"])
        if arrays["table"].shape != s.table.shape:
            raise ValueError("snapshot table shape mismatch")
        s.table = arrays["table"].astype(np.int64)
        return s

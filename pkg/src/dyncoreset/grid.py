"""Randomly shifted nested grids over [side]^d.

Level -1 is a single root cell. Level i >= 0 has cells of width side / 2^i,
offset by a shift vector v, so the cell holding p has index
floor((p - v) / width).
"""

from __future__ import annotations

import itertools
import math
from typing import NamedTuple, Sequence

import numpy as np

from .hashing import derive_seed, point_keys
from .model import Params

LEVEL_BITS = 7


class CellId(NamedTuple):
    level: int
    index: tuple[int, ...]


ROOT = CellId(-1, ())


class GridSystem:
    def __init__(self, params: Params, shift: Sequence[int] | None = None):
        self.params = params
        self.d = params.d
        self.side = params.side
        self.L = params.L
        if shift is None:
            rng = np.random.default_rng(derive_seed(params.seed, "shift"))
            shift = rng.integers(0, self.side, size=self.d)
        shift = tuple(int(x) for x in shift)
        if len(shift) != self.d or any(not 0 <= x < self.side for x in shift):
            raise ValueError("shift must have d entries in [0, side-1]")
        self.shift = shift
        self._v = np.array(shift, dtype=np.int64)
        self._index_bits = self.L + 2
        self._cells_cache: dict[int, np.ndarray] = {}

    def width(self, level: int) -> int:
        self._check_level(level)
        if level < 0:
            raise ValueError("the root cell has no width")
        return self.side >> level

    def _check_level(self, level: int) -> None:
        if not -1 <= level <= self.L:
            raise ValueError(f"level {level} outside [-1, {self.L}]")

    # single-cell operations

    def cell_of(self, p: Sequence[int], level: int) -> CellId:
        self._check_level(level)
        if level == -1:
            return ROOT
        w = self.side >> level
        return CellId(level, tuple((int(x) - v) // w for x, v in zip(p, self.shift)))

    def lower_corner(self, c: CellId) -> tuple[int, ...]:
        w = self.width(c.level)
        return tuple(v + n * w for v, n in zip(self.shift, c.index))

    def center_of(self, c: CellId) -> tuple[float, ...]:
        if c.level == -1:
            return (0.0,) * self.d
        lo = self.lower_corner(c)
        if c.level == self.L:
            # unit cells are represented by their single integer point
            return tuple(float(x) for x in lo)
        half = self.width(c.level) / 2
        return tuple(x + half for x in lo)

    def parent_of(self, c: CellId) -> CellId:
        if c.level < 0:
            raise ValueError("the root has no parent")
        if c.level == 0:
            return ROOT
        return CellId(c.level - 1, tuple(n // 2 for n in c.index))

    def children_of(self, c: CellId) -> list[CellId]:
        if c.level >= self.L:
            raise ValueError("level-L cells have no children")
        if c.level == -1:
            return [CellId(0, idx) for idx in self._domain_indices(0)]
        out = []
        for bits in itertools.product((0, 1), repeat=self.d):
            child = CellId(c.level + 1, tuple(2 * n + b for n, b in zip(c.index, bits)))
            if self.intersects_domain(child):
                out.append(child)
        return out

    def intersects_domain(self, c: CellId) -> bool:
        if c.level == -1:
            return True
        w = self.width(c.level)
        for lo in self.lower_corner(c):
            if lo + w - 1 < 1 or lo > self.side:
                return False
        return True

    def _domain_index_range(self, level: int) -> list[range]:
        w = self.width(level)
        return [range((1 - v) // w, (self.side - v) // w + 1) for v in self.shift]

    def _domain_indices(self, level: int):
        return itertools.product(*self._domain_index_range(level))

    def dist_cell_to_set(self, c: CellId, Z, discrete: bool = False) -> float:
        """Distance from the nearest center in Z to the closed cell box.

        With discrete=True the box is replaced by the integer points of the cell.
        """
        if c.level < 0:
            raise ValueError("distance to the root cell is undefined")
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if Z.shape[0] == 0:
            raise ValueError("empty center set")
        lo = np.array(self.lower_corner(c), dtype=float)
        hi = lo + self.width(c.level) - (1 if discrete else 0)
        gap = np.maximum(np.maximum(lo - Z, Z - hi), 0.0)
        return float(np.sqrt((gap * gap).sum(axis=1)).min())

    def diameter(self, level: int) -> float:
        return math.sqrt(self.d) * self.width(level)

    # vectorised operations

    def cell_indices(self, points: np.ndarray, level: int) -> np.ndarray:
        """Integer cell indices (n, d) of points at a level >= 0."""
        w = self.width(level)
        return np.floor_divide(np.asarray(points, dtype=np.int64) - self._v, w)

    def centers(self, level: int, indices: np.ndarray) -> np.ndarray:
        indices = np.asarray(indices, dtype=np.int64)
        if level == -1:
            return np.zeros((indices.shape[0], self.d))
        w = self.width(level)
        lo = (self._v + indices * w).astype(float)
        return lo if level == self.L else lo + w / 2

    def cell_keys(self, level: int, indices: np.ndarray) -> np.ndarray:
        """Pack (level, index) into uint64 keys: level+1 in the low bits, then biased indices."""
        if level == -1:
            return np.zeros(np.asarray(indices).shape[0], dtype=np.uint64)
        self._check_level(level)
        bits = self._index_bits
        if LEVEL_BITS + bits * self.d > 62:
            raise ValueError("cell keys need more than 62 bits; reduce d or delta")
        idx = np.asarray(indices, dtype=np.int64) + self.side
        key = np.full(idx.shape[0], level + 1, dtype=np.uint64)
        for j in range(self.d):
            key |= idx[:, j].astype(np.uint64) << np.uint64(LEVEL_BITS + bits * j)
        return key

    def point_cell_keys(self, points: np.ndarray, level: int) -> np.ndarray:
        if level == -1:
            return np.zeros(len(points), dtype=np.uint64)
        return self.cell_keys(level, self.cell_indices(points, level))

    def cell_key(self, c: CellId) -> int:
        if c.level == -1:
            return 0
        return int(self.cell_keys(c.level, np.array([c.index], dtype=np.int64))[0])

    def decode_keys(self, keys) -> tuple[np.ndarray, np.ndarray]:
        keys = np.asarray(keys, dtype=np.uint64)
        levels = (keys & np.uint64((1 << LEVEL_BITS) - 1)).astype(np.int64) - 1
        mask = np.uint64((1 << self._index_bits) - 1)
        idx = np.empty((keys.shape[0], self.d), dtype=np.int64)
        for j in range(self.d):
            idx[:, j] = ((keys >> np.uint64(LEVEL_BITS + self._index_bits * j)) & mask).astype(np.int64) - self.side
        return levels, idx

    def decode_key(self, key: int) -> CellId:
        if key == 0:
            return ROOT
        levels, idx = self.decode_keys(np.array([key], dtype=np.uint64))
        return CellId(int(levels[0]), tuple(int(x) for x in idx[0]))

    def parent_keys(self, level: int, keys) -> np.ndarray:
        """Keys of the parents of level-`level` cells."""
        if level == 0:
            return np.zeros(len(keys), dtype=np.uint64)
        _, idx = self.decode_keys(keys)
        return self.cell_keys(level - 1, np.floor_divide(idx, 2))

    def child_keys(self, level: int, keys) -> np.ndarray:
        """Keys of all domain-intersecting children of level-`level` cells."""
        if level == -1:
            return self.domain_cell_keys(0)
        _, idx = self.decode_keys(keys)
        parts = []
        for bits in itertools.product((0, 1), repeat=self.d):
            parts.append(2 * idx + np.array(bits, dtype=np.int64))
        child = np.concatenate(parts) if parts else idx
        lo = self._v + child * self.width(level + 1)
        ok = np.all((lo + self.width(level + 1) - 1 >= 1) & (lo <= self.side), axis=1)
        return np.unique(self.cell_keys(level + 1, child[ok]))

    def domain_cell_count(self, level: int) -> int:
        return math.prod(len(r) for r in self._domain_index_range(level))

    def domain_cell_keys(self, level: int) -> np.ndarray:
        """Sorted keys of every level cell intersecting the domain."""
        if level not in self._cells_cache:
            ranges = [np.arange(r.start, r.stop, dtype=np.int64) for r in self._domain_index_range(level)]
            mesh = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(-1, self.d)
            self._cells_cache[level] = np.sort(self.cell_keys(level, mesh))
        return self._cells_cache[level]

    def point_keys(self, points: np.ndarray) -> np.ndarray:
        return point_keys(points, self.side)

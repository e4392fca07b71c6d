"""Recovery of every point that lives in a sparsely populated cell.

A single instance hashes each point to a tag in [U], U = 100 * beta, and
stores the key (cell, tag) with the packed point as payload in one K-Set.
A (cell, tag) pair with count 1 reveals its point exactly; a payload
fingerprint guards against reconstructing a point that is not there.
The full structure unions A independent single instances and checks the
result against exact per-cell counts kept in a separate K-Set.
"""

from __future__ import annotations

import math

import numpy as np

from .hashing import KeyedHash, derive_seed
from .kset import KEY_LIMIT, KSet, KSetFailure


class SparseCellsFailure(Exception):
    pass


class SparseCellsSingle:
    def __init__(self, alpha: int, beta: int, delta: float, seed: int = 0):
        self.alpha = max(1, int(alpha))
        self.beta = max(1, int(beta))
        self.delta = float(delta)
        self.seed = int(seed)
        self.U = 100 * self.beta
        self._tag = KeyedHash(derive_seed(self.seed, "tag"), rounds=2)
        self.sketch = KSet(2 * self.alpha * self.U, self.delta, derive_seed(self.seed, "single"), payload=True)

    def tags(self, point_keys) -> np.ndarray:
        return self._tag(np.asarray(point_keys, dtype=np.uint64)) % np.uint64(self.U)

    def _keys(self, point_keys, cell_keys) -> np.ndarray:
        cells = np.asarray(cell_keys, dtype=np.uint64)
        if cells.size and int(cells.max()) >= KEY_LIMIT // self.U:
            raise ValueError("cell keys too wide for the tag space")
        return cells * np.uint64(self.U) + self.tags(point_keys)

    def update_many(self, point_keys, cell_keys, signs) -> None:
        pk = np.asarray(point_keys, dtype=np.uint64)
        if pk.size == 0:
            return
        self.sketch.update_many(self._keys(pk, cell_keys), signs, payloads=pk)

    def update(self, point_key: int, cell_key: int, op: int = 1) -> None:
        self.update_many([point_key], [cell_key], [op])

    def query(self) -> dict[int, int]:
        """{point key: cell key} for every (cell, tag) slot holding exactly one point."""
        try:
            items = self.sketch.retrieve()
        except KSetFailure as exc:
            raise SparseCellsFailure(str(exc)) from exc
        out: dict[int, int] = {}
        if not items:
            return out
        keys = np.fromiter(items.keys(), dtype=np.uint64, count=len(items))
        single = [(int(key), items[int(key)]) for key in keys if items[int(key)][0] == 1]
        if not single:
            return out
        pays = np.array([v[1] for _, v in single], dtype=np.uint64)
        fps = np.array([v[2] for _, v in single], dtype=np.uint64)
        if np.any(self.sketch._pay_hash(pays) != fps):
            raise SparseCellsFailure("payload fingerprint mismatch")
        slots = np.array([key for key, _ in single], dtype=np.uint64)
        if np.any(self.tags(pays) != slots % np.uint64(self.U)):
            raise SparseCellsFailure("payload does not hash to its tag")
        for slot, pay in zip(slots.tolist(), pays.tolist()):
            out[pay] = slot // self.U
        return out

    def state(self) -> dict[str, np.ndarray]:
        return self.sketch.state()

    def is_empty(self) -> bool:
        return self.sketch.is_empty()

    @property
    def nbytes(self) -> int:
        return self.sketch.nbytes


def repetitions(alpha: int, beta: int, delta: float) -> int:
    # base 10: each repetition misses a given sparse point with probability <= 1/10
    return max(1, math.ceil(math.log10(4 * alpha * beta / delta)))


class SparseCells:
    def __init__(self, alpha: int, beta: int, delta: float, seed: int = 0):
        self.alpha = max(1, int(alpha))
        self.beta = max(1, int(beta))
        self.delta = float(delta)
        self.seed = int(seed)
        self.A = repetitions(self.alpha, self.beta, self.delta)
        self.singles = [
            SparseCellsSingle(self.alpha, self.beta, self.delta / (4 * self.A), derive_seed(self.seed, "rep", a))
            for a in range(self.A)
        ]
        self.counts = KSet(self.alpha, self.delta / 2, derive_seed(self.seed, "cells"))

    def update_many(self, point_keys, cell_keys, signs) -> None:
        pk = np.asarray(point_keys, dtype=np.uint64)
        if pk.size == 0:
            return
        ck = np.asarray(cell_keys, dtype=np.uint64)
        for s in self.singles:
            s.update_many(pk, ck, signs)
        self.counts.update_many(ck, signs)

    def update(self, point_key: int, cell_key: int, op: int = 1) -> None:
        self.update_many([point_key], [cell_key], [op])

    def query(self) -> dict[int, int]:
        """Union of single-instance recoveries, verified complete for cells with <= beta points."""
        try:
            cells = self.counts.retrieve()
        except KSetFailure as exc:
            raise SparseCellsFailure(str(exc)) from exc
        found: dict[int, int] = {}
        for s in self.singles:
            found.update(s.query())
        per_cell: dict[int, int] = {}
        for cell in found.values():
            per_cell[cell] = per_cell.get(cell, 0) + 1
        for cell, n in per_cell.items():
            if cells.get(cell, 0) < n:
                raise SparseCellsFailure("recovered more points than a cell holds")
        for cell, n in cells.items():
            if n <= self.beta and per_cell.get(cell, 0) != n:
                raise SparseCellsFailure("a sparse cell was not fully recovered")
        return found

    def state(self) -> dict[str, np.ndarray]:
        out = {}
        for a, s in enumerate(self.singles):
            out.update({f"rep{a}/{f}": v for f, v in s.state().items()})
        out.update({f"cells/{f}": v for f, v in self.counts.state().items()})
        return out

    def is_empty(self) -> bool:
        return self.counts.is_empty() and all(s.is_empty() for s in self.singles)

    @property
    def nbytes(self) -> int:
        return self.counts.nbytes + sum(s.nbytes for s in self.singles)

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for a, s in enumerate(self.singles):
            s.sketch.load_state({f: arrays[f"rep{a}/{f}"] for f in ["idx", *s.sketch.fields]})
        self.counts.load_state({f: arrays[f"cells/{f}"] for f in ["idx", *self.counts.fields]})

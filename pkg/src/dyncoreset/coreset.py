"""Weighted coresets, cost evaluation and the per-level telescoping costs."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

import numpy as np
from scipy.spatial.distance import cdist

from .grid import GridSystem
from .model import WeightedPoint

CHUNK = 1 << 22


def _as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None] if arr.size else arr.reshape(0, 1)
    return arr


def dist_to_set(points, Z) -> np.ndarray:
    """Distance of every point to its nearest center, chunked to bound memory."""
    P = _as_points(points)
    Z = _as_points(Z)
    if Z.shape[0] == 0:
        raise ValueError("empty center set")
    if P.shape[0] == 0:
        return np.zeros(0)
    step = max(1, CHUNK // Z.shape[0])
    out = np.empty(P.shape[0])
    for s in range(0, P.shape[0], step):
        out[s:s + step] = cdist(P[s:s + step], Z).min(axis=1)
    return out


def cost(points, Z, weights=None) -> float:
    """sum_p w(p) * d(p, Z); unit weights for raw point sets."""
    if isinstance(points, Coreset):
        return points.cost(Z)
    dist = dist_to_set(points, Z)
    if weights is None:
        return float(dist.sum())
    return float(np.dot(np.asarray(weights, dtype=float), dist))


@dataclass
class Coreset:
    d: int
    delta: int
    k: int
    positions: np.ndarray
    weights: np.ndarray
    levels: np.ndarray
    provenance: list[str]
    total_weight: Fraction = Fraction(0)
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, self.d)
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        self.levels = np.asarray(self.levels, dtype=np.int64).reshape(-1)
        if not (len(self.positions) == len(self.weights) == len(self.levels) == len(self.provenance)):
            raise ValueError("coreset columns have different lengths")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite")

    @classmethod
    def empty(cls, d: int, delta: int, k: int) -> "Coreset":
        return cls(d, delta, k, np.zeros((0, d)), np.zeros(0), np.zeros(0, np.int64), [])

    @classmethod
    def from_points(cls, points, d: int, delta: int, k: int) -> "Coreset":
        P = np.asarray(points, dtype=float).reshape(-1, d)
        n = len(P)
        return cls(d, delta, k, P, np.ones(n), np.zeros(n, np.int64), ["point"] * n, Fraction(n))

    def __len__(self) -> int:
        return len(self.weights)

    def cost(self, Z) -> float:
        if len(self) == 0:
            return 0.0
        return float(np.dot(self.weights, dist_to_set(self.positions, Z)))

    def entries(self) -> list[WeightedPoint]:
        return [
            WeightedPoint(tuple(float(x) for x in self.positions[j]), float(self.weights[j]),
                          int(self.levels[j]), self.provenance[j])
            for j in range(len(self))
        ]

    @property
    def min_weight(self) -> float:
        return float(self.weights.min()) if len(self) else 0.0

    # text format

    def to_text(self) -> str:
        lines = [f"# coreset d={self.d} delta={self.delta} k={self.k} total_weight={_fmt_total(self.total_weight)}"]
        for j in range(len(self)):
            coords = " ".join(_fmt_num(x) for x in self.positions[j])
            lines.append(f"{repr(float(self.weights[j]))} {coords} {int(self.levels[j])} {self.provenance[j]}")
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "Coreset":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("# coreset"):
            raise ValueError("missing coreset header")
        header = dict(tok.split("=", 1) for tok in lines[0].split()[2:])
        d, delta, k = int(header["d"]), int(header["delta"]), int(header["k"])
        total = Fraction(header["total_weight"])
        pos, w, lv, prov = [], [], [], []
        for lineno, ln in enumerate(lines[1:], start=2):
            parts = ln.split()
            if len(parts) != d + 3:
                raise ValueError(f"line {lineno}: expected {d + 3} fields")
            w.append(float(parts[0]))
            pos.append([float(x) for x in parts[1:1 + d]])
            lv.append(int(parts[1 + d]))
            prov.append(parts[2 + d])
        return cls(d, delta, k, np.array(pos).reshape(-1, d), np.array(w), np.array(lv, np.int64), prov, total)

    @classmethod
    def read(cls, path) -> "Coreset":
        with open(path) as fh:
            return cls.from_text(fh.read())


def _fmt_num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def _fmt_total(t: Fraction) -> str:
    t = Fraction(t)
    return str(t.numerator) if t.denominator == 1 else repr(float(t))


# telescoping

CellValueMap = Mapping[int, Fraction]


def level_cost(grid: GridSystem, points, level: int, Z) -> float:
    """sum_p d(c_p^level, Z) - d(c_p^{level-1}, Z); the root level is n * d(0, Z)."""
    P = np.asarray(points, dtype=np.int64).reshape(-1, grid.d)
    if level == -1:
        return len(P) * float(dist_to_set(np.zeros((1, grid.d)), Z)[0])
    here = dist_to_set(grid.centers(level, grid.cell_indices(P, level)), Z)
    if level == 0:
        up = dist_to_set(np.zeros((1, grid.d)), Z)[0]
    else:
        up = dist_to_set(grid.centers(level - 1, grid.cell_indices(P, level - 1)), Z)
    return float((here - up).sum())


def split_levels(grid: GridSystem, values: CellValueMap) -> dict[int, tuple[np.ndarray, list]]:
    """Group a cell value map by level: level -> (sorted keys, values)."""
    if not values:
        return {}
    keys = np.fromiter(values.keys(), dtype=np.uint64, count=len(values))
    levels, _ = grid.decode_keys(keys)
    out = {}
    for lv in np.unique(levels):
        ks = np.sort(keys[levels == lv])
        out[int(lv)] = (ks, [values[int(x)] for x in ks])
    return out


def level_cost_hat(grid: GridSystem, values: CellValueMap, level: int, Z) -> float:
    """Estimated level cost from cell values: sum_C v(C) (d(c(C), Z) - d(c(parent C), Z))."""
    if level == -1:
        v = values.get(0, 0)
        return float(v) * float(dist_to_set(np.zeros((1, grid.d)), Z)[0])
    groups = split_levels(grid, {k: v for k, v in values.items() if k != 0})
    if level not in groups:
        return 0.0
    keys, vals = groups[level]
    _, idx = grid.decode_keys(keys)
    here = dist_to_set(grid.centers(level, idx), Z)
    if level == 0:
        up = np.full(len(keys), dist_to_set(np.zeros((1, grid.d)), Z)[0])
    else:
        up = dist_to_set(grid.centers(level - 1, np.floor_divide(idx, 2)), Z)
    return float(np.dot(np.array([float(v) for v in vals]), here - up))


def exact_values(grid: GridSystem, points) -> dict[int, int]:
    """True cell counts at every level, root included."""
    P = np.asarray(points, dtype=np.int64).reshape(-1, grid.d)
    values: dict[int, int] = {0: len(P)}
    for level in range(grid.L + 1):
        keys, counts = np.unique(grid.point_cell_keys(P, level), return_counts=True)
        values.update(zip(keys.tolist(), counts.tolist()))
    return values


def weights_from_values(grid: GridSystem, values: CellValueMap, k: int = 1, provenance: str = "cell") -> Coreset:
    """Coreset weights wt(C) = v(C) - sum of child values; level-L cells keep their value."""
    values = {int(key): Fraction(v) for key, v in values.items()}
    values.setdefault(0, Fraction(0))
    groups = split_levels(grid, {key: v for key, v in values.items() if key != 0})
    child_sum: dict[int, Fraction] = defaultdict(Fraction)
    for level, (keys, vals) in groups.items():
        parents = grid.parent_keys(level, keys)
        for pk, v in zip(parents.tolist(), vals):
            child_sum[pk] += v
    pos, w, lv, prov = [], [], [], []
    exact: list[Fraction] = []

    def emit(level: int, keys: np.ndarray, weights: list[Fraction]):
        nz = [j for j, x in enumerate(weights) if x != 0]
        if not nz:
            return
        if level == -1:
            centers = np.zeros((len(nz), grid.d))
        else:
            _, idx = grid.decode_keys(keys[nz])
            centers = grid.centers(level, idx)
        pos.append(centers)
        w.extend(float(weights[j]) for j in nz)
        exact.extend(weights[j] for j in nz)
        lv.extend([level] * len(nz))
        prov.extend([provenance] * len(nz))

    emit(-1, np.zeros(1, np.uint64), [values[0] - child_sum.get(0, Fraction(0))])
    for level in sorted(groups):
        keys, vals = groups[level]
        if level == grid.L:
            ws = list(vals)
        else:
            ws = [v - child_sum.get(int(key), Fraction(0)) for key, v in zip(keys.tolist(), vals)]
        emit(level, keys, ws)
    positions = np.concatenate(pos) if pos else np.zeros((0, grid.d))
    total = sum(exact, Fraction(0))
    cs = Coreset(grid.d, grid.params.delta, k, positions, np.array(w), np.array(lv, np.int64), prov, total)
    cs.info["exact_weights"] = exact
    return cs


def telescoped_cost(grid: GridSystem, values: CellValueMap, Z) -> float:
    return sum(level_cost_hat(grid, values, i, Z) for i in range(-1, grid.L + 1))


def relative_error(true_cost: float, approx: float) -> float:
    if true_cost == 0:
        return 0.0 if approx == 0 else math.inf
    return abs(approx - true_cost) / true_cost

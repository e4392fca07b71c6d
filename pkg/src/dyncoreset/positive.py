"""Coresets with non-negative weights.

Heavy cells (identified from per-level heavy hitter sketches) keep an
estimated count. Every other point is charged to its ending level, the last
heavy cell on its root-to-leaf path, and is represented by a sample drawn
one level below with weight 1/pi. Negative cell weights left after
subtracting children and samples are pushed down the heavy tree by
`rectify_weights`.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .coreset import Coreset
from .general import AllGuessesFailed, GeneralStream, exact_inverse, level_candidates
from .grid import GridSystem
from .hashing import GuessLadder, SampleHash, derive_seed, pi_positive, points_from_keys
from .heavy_hitter import HeavyHitterSketch
from .model import Params
from .sparse_cells import SparseCells, SparseCellsFailure


class InfeasibleRectification(Exception):
    """A negative cell weight exceeds the adjustable mass below it."""


# parameters


def positive_hh_accuracy(params: Params) -> float:
    d, L = params.d, max(params.L, 1)
    return params.eps * math.sqrt(params.rho / (params.lambdas.l7 * params.k * d**3 * L**3))


def positive_head(params: Params) -> float:
    return params.lambdas.l1 * max(params.L, 1) * params.k / params.rho


def heavy_top(params: Params) -> int:
    """Top-set size per level, capped by the per-level heavy cell bound."""
    m = math.floor(params.lambdas.l8 * (params.L + 1) * params.k / params.rho)
    return min(m, math.floor(positive_head(params)))


def sparse_alpha(params: Params) -> int:
    d, L, k, eps, rho = params.d, max(params.L, 1), params.k, params.eps, params.rho
    raw = d**3 * L**4 * k / eps**2 * (d + math.log(k * L / rho) / rho)
    return max(1, math.ceil(params.constant_scale * params.lambdas.alpha * raw))


def sparse_beta(params: Params) -> int:
    d, L, k, eps, rho = params.d, max(params.L, 1), params.k, params.eps, params.rho
    raw = d**3 * L**2 / eps**2 * (rho * d + math.log(k * L / rho) + rho / (k * L) * math.log(L / rho))
    return max(1, math.ceil(params.constant_scale * params.lambdas.beta * raw))


# heavy cells


@dataclass
class HeavyScheme:
    """Heavy cell keys per level; level -1 holds only the root (key 0)."""

    L: int
    levels: dict[int, set[int]]
    estimates: dict[int, int] = field(default_factory=dict)

    def heavy(self, level: int) -> set[int]:
        if level == -1:
            return {0}
        return self.levels.get(level, set())

    def all_cells(self) -> list[int]:
        return [0] + sorted(k for lv in range(self.L) for k in self.heavy(lv))

    def check(self, grid: GridSystem, cap: float) -> None:
        if self.heavy(self.L):
            raise AssertionError("level-L cells can never be heavy")
        for lv in range(self.L):
            keys = self.heavy(lv)
            if len(keys) > cap:
                raise AssertionError(f"level {lv} has {len(keys)} heavy cells, cap {cap}")
            if keys:
                parents = grid.parent_keys(lv, np.array(sorted(keys), dtype=np.uint64))
                if not set(parents.tolist()) <= self.heavy(lv - 1):
                    raise AssertionError(f"level {lv} heavy cells are not closed under parents")


def identify_heavy(grid: GridSystem, hh: list[HeavyHitterSketch], params: Params) -> HeavyScheme:
    top_m = heavy_top(params)
    levels: dict[int, set[int]] = {}
    estimates: dict[int, int] = {}
    prev = {0}
    for i in range(params.L):
        cands = level_candidates(grid, i, sorted(prev))
        hits = hh[i].query(cands).top(top_m)
        if hits:
            keys = np.array(hits.key_list(), dtype=np.uint64)
            parents = grid.parent_keys(i, keys).tolist()
            kept = {key: est for (key, est), pk in zip(hits, parents) if pk in prev}
        else:
            kept = {}
        levels[i] = set(kept)
        estimates.update(kept)
        prev = levels[i]
    scheme = HeavyScheme(params.L, levels, estimates)
    scheme.check(grid, positive_head(params))
    return scheme


def ending_levels(grid: GridSystem, scheme: HeavyScheme, points) -> np.ndarray:
    """Last heavy level on each point's path (-1 when only the root is heavy)."""
    P = np.asarray(points, dtype=np.int64).reshape(-1, grid.d)
    out = np.full(len(P), -1, dtype=np.int64)
    alive = np.ones(len(P), dtype=bool)
    for i in range(grid.L):
        heavy = scheme.heavy(i)
        if not heavy or not alive.any():
            break
        keys = grid.point_cell_keys(P, i)
        alive &= np.isin(keys, np.fromiter(heavy, dtype=np.uint64, count=len(heavy)))
        out[alive] = i
    return out


def ending_level(grid: GridSystem, scheme: HeavyScheme, p) -> int:
    return int(ending_levels(grid, scheme, [p])[0])


# rectification


@dataclass
class WeightTree:
    """Heavy cells with their weights, heavy children and attached samples."""

    cell_weights: dict[int, Fraction]
    children: dict[int, list[int]]
    samples: dict[int, list[int]] = field(default_factory=dict)
    sample_weights: dict[int, Fraction] = field(default_factory=dict)
    cell_level: dict[int, int] = field(default_factory=dict)

    def total(self) -> Fraction:
        return sum(self.cell_weights.values(), Fraction(0)) + sum(self.sample_weights.values(), Fraction(0))

    def copy(self) -> "WeightTree":
        return WeightTree(dict(self.cell_weights), {k: list(v) for k, v in self.children.items()},
                          {k: list(v) for k, v in self.samples.items()}, dict(self.sample_weights),
                          dict(self.cell_level))


def rectify_weights(tree: WeightTree) -> WeightTree:
    """Move every negative cell weight onto its descendants, top-down.

    The deficit of a cell is taken from its heavy children in ascending key
    order, then from its samples in ascending point key order, each clamped
    at zero, then likewise from deeper descendants breadth first. The cell's
    weight becomes zero, so the total weight is unchanged.
    """
    out = tree.copy()
    order = sorted(out.cell_weights, key=lambda c: (out.cell_level.get(c, -1), c))
    for cell in order:
        w = out.cell_weights[cell]
        if w >= 0:
            continue
        deficit = -w
        out.cell_weights[cell] = Fraction(0)
        queue = deque([cell])
        while deficit > 0 and queue:
            node = queue.popleft()
            kids = sorted(out.children.get(node, []))
            for child in kids:
                take = min(deficit, max(out.cell_weights[child], Fraction(0)))
                out.cell_weights[child] -= take
                deficit -= take
                if deficit == 0:
                    break
            if deficit > 0:
                for pk in sorted(out.samples.get(node, [])):
                    take = min(deficit, max(out.sample_weights[pk], Fraction(0)))
                    out.sample_weights[pk] -= take
                    deficit -= take
                    if deficit == 0:
                        break
            queue.extend(kids)
        if deficit > 0:
            raise InfeasibleRectification(f"cell {cell} keeps a deficit of {float(deficit)}")
    return out


# streaming


class PositiveStream(GeneralStream):
    """Streaming sketch for the non-negative coreset.

    Heavy hitter sketches cover levels 0..L-1; SparseCells instances per
    (guess, level) receive sampled points together with their level cell.
    """

    mode = "positive"

    def __init__(self, params: Params, grid: GridSystem | None = None):
        self.params = params
        self.grid = grid or GridSystem(params)
        self.L = params.L
        self.ladder = GuessLadder(params.d, params.side)
        self.m = 0
        self.alpha = sparse_alpha(params)
        self.beta = sparse_beta(params)
        self.sc_delta = min(0.5, params.rho / (params.d * max(self.L, 1)))
        self.eps_hh = positive_hh_accuracy(params)
        self.k_head = positive_head(params)
        universe = params.side**params.d
        self.hh = [
            HeavyHitterSketch(universe, self.k_head, self.eps_hh, params.rho / max(self.L, 1),
                              seed=derive_seed(params.seed, "hh", i), scale=params.constant_scale)
            for i in range(self.L)
        ]
        self.pi = [[pi_positive(params, i, o) for i in range(self.L + 1)] for o in self.ladder.values]
        self.sketches: dict[tuple, SparseCells] = {}

    def _sketch(self, name: tuple) -> SparseCells:
        if name not in self.sketches:
            i = name[1]
            self.sketches[name] = SparseCells(self.alpha, self.beta, self.sc_delta,
                                              seed=derive_seed(self.params.seed, "sc", i))
        return self.sketches[name]

    def update_points(self, points, signs) -> None:
        P = np.asarray(points, dtype=np.int64).reshape(-1, self.params.d)
        signs = np.asarray(signs, dtype=np.int64).reshape(-1)
        if len(P) == 0:
            return
        self.m += int(signs.sum())
        pkeys = self.grid.point_keys(P)
        for i in range(self.L + 1):
            ck = self.grid.point_cell_keys(P, i)
            if i < self.L:
                self.hh[i].update_many(ck, signs)
            full_done = False
            for j in range(len(self.ladder)):
                pi = self.pi[j][i]
                if pi >= 1.0:
                    if not full_done:
                        self._sketch(("full", i)).update_many(pkeys, ck, signs)
                        full_done = True
                    continue
                bits = SampleHash(self.params.seed, j, i).bits(pkeys, pi)
                if bits.any():
                    self._sketch((j, i)).update_many(pkeys[bits], ck[bits], signs[bits])

    def _recover_all(self):
        cache: dict[tuple, dict | None] = {}
        failures: dict[int, list[int]] = {}
        for j in range(len(self.ladder)):
            failed = []
            for i in range(self.L + 1):
                name = self._sketch_name(j, i)
                if name not in cache:
                    sk = self.sketches.get(name)
                    try:
                        cache[name] = {} if sk is None else sk.query()
                    except SparseCellsFailure:
                        cache[name] = None
                if cache[name] is None:
                    failed.append(i)
                    break
            if not failed:
                return j, [cache[self._sketch_name(j, i)] for i in range(self.L + 1)], failures
            failures[j] = failed
        raise AllGuessesFailed(failures)

    def weight_tree(self) -> tuple[WeightTree, HeavyScheme, dict]:
        """Heavy tree with the unrectified cell weights and the attached samples."""
        j, recovered, failures = self._recover_all()
        grid = self.grid
        scheme = identify_heavy(grid, self.hh, self.params)
        values: dict[int, Fraction] = {0: Fraction(self.m)}
        values.update({key: Fraction(v) for key, v in scheme.estimates.items()})
        level_of = {0: -1}
        children: dict[int, list[int]] = {0: []}
        for i in range(self.L):
            keys = sorted(scheme.heavy(i))
            if not keys:
                continue
            parents = grid.parent_keys(i, np.array(keys, dtype=np.uint64)).tolist()
            for key, pk in zip(keys, parents):
                level_of[key] = i
                children.setdefault(pk, []).append(key)
                children.setdefault(key, [])
        samples: dict[int, list[int]] = {}
        sample_weights: dict[int, Fraction] = {}
        sample_level: dict[int, int] = {}
        for i in range(self.L + 1):
            got = recovered[i]
            if not got:
                continue
            pk = np.fromiter(got.keys(), dtype=np.uint64, count=len(got))
            pts = points_from_keys(pk, grid.d, grid.side)
            up = grid.point_cell_keys(pts, i - 1)
            up_heavy = np.isin(up, np.fromiter(scheme.heavy(i - 1), dtype=np.uint64))
            here = scheme.heavy(i) if i < self.L else set()
            if here:
                here_heavy = np.isin(grid.point_cell_keys(pts, i), np.fromiter(here, dtype=np.uint64))
            else:
                here_heavy = np.zeros(len(pk), dtype=bool)
            keep = up_heavy & ~here_heavy
            w = exact_inverse(self.pi[j][i])
            for key, cell in zip(pk[keep].tolist(), up[keep].tolist()):
                samples.setdefault(cell, []).append(key)
                sample_weights[key] = w
                sample_level[key] = i
        weights = {}
        for cell, v in values.items():
            below = sum((values[c] for c in children.get(cell, [])), Fraction(0))
            below += sum((sample_weights[p] for p in samples.get(cell, [])), Fraction(0))
            weights[cell] = v - below
        tree = WeightTree(weights, children, {c: sorted(v) for c, v in samples.items()}, sample_weights, level_of)
        info = {"o_star": self.ladder.values[j], "o_index": j, "failures": failures,
                "pis": list(self.pi[j]), "sample_level": sample_level}
        return tree, scheme, info

    def query(self) -> Coreset:
        tree, scheme, info = self.weight_tree()
        fixed = rectify_weights(tree)
        cs = tree_to_coreset(self.grid, fixed, info["sample_level"], self.params.k)
        info["unrectified_min"] = float(min(tree.cell_weights.values(), default=0))
        info["heavy_cells"] = len(tree.cell_weights)
        cs.info.update(info)
        return cs

    def state(self) -> dict[str, np.ndarray]:
        out = {"m": np.array([self.m], dtype=np.int64)}
        for i, h in enumerate(self.hh):
            out[f"hh/{i}"] = h.table.copy()
        for name in sorted(self.sketches, key=str):
            sk = self.sketches[name]
            if sk.is_empty():
                continue
            for f, arr in sk.state().items():
                out[f"sc/{name[0]}/{name[1]}/{f}"] = arr
        return out

    def _load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.m = int(arrays["m"][0])
        for i, h in enumerate(self.hh):
            h.table = arrays[f"hh/{i}"].astype(np.int64)
        groups: dict[tuple, dict] = {}
        for name, arr in arrays.items():
            if name.startswith("sc/"):
                _, a, b, rest = name.split("/", 3)
                key = (a if a == "full" else int(a), int(b))
                groups.setdefault(key, {})[rest] = arr
        for key, fields in groups.items():
            self._sketch(key).load_state(fields)


def tree_to_coreset(grid: GridSystem, tree: WeightTree, sample_level: dict[int, int], k: int) -> Coreset:
    pos, w, lv, prov, exact = [], [], [], [], []
    for cell in sorted(tree.cell_weights, key=lambda c: (tree.cell_level.get(c, -1), c)):
        x = tree.cell_weights[cell]
        if x == 0:
            continue
        c = grid.decode_key(cell)
        pos.append(grid.center_of(c))
        w.append(float(x))
        exact.append(x)
        lv.append(c.level)
        prov.append("heavy")
    if tree.sample_weights:
        keys = sorted(tree.sample_weights)
        pts = points_from_keys(np.array(keys, dtype=np.uint64), grid.d, grid.side)
        for key, p in zip(keys, pts):
            x = tree.sample_weights[key]
            if x == 0:
                continue
            pos.append(tuple(float(v) for v in p))
            w.append(float(x))
            exact.append(x)
            lv.append(sample_level.get(key, grid.L))
            prov.append("sample")
    positions = np.array(pos, dtype=float).reshape(-1, grid.d)
    cs = Coreset(grid.d, grid.params.delta, k, positions, np.array(w), np.array(lv, np.int64), prov,
                 sum(exact, Fraction(0)))
    cs.info["exact_weights"] = exact
    return cs

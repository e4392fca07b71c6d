"""Generally weighted coresets: offline construction and the streaming sketch.

Both produce a cell value map (an estimate of every cell's point count) and
turn it into weights with `weights_from_values`. Weights can be negative.
"""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Sequence

import numpy as np

from .coreset import Coreset, weights_from_values
from .grid import GridSystem
from .hashing import GuessLadder, SampleHash, derive_seed, pi_general
from .heavy_hitter import HeavyHitterSketch
from .kset import KSet, KSetFailure, _pack, _unpack
from .model import E, Op, Params, StreamUpdate

CANDIDATE_LIMIT = 1 << 20


class AllGuessesFailed(Exception):
    """No guess of the optimum cost had every per-level sketch succeed."""

    def __init__(self, failures: dict[int, list[int]]):
        self.failures = failures
        worst = ", ".join(f"o=2^{j}: levels {lv}" for j, lv in sorted(failures.items())[:6])
        super().__init__(f"every guess failed ({worst}{', ...' if len(failures) > 6 else ''})")


def exact_inverse(pi: float) -> Fraction:
    return 1 / Fraction(pi)


# offline


def offline_values(grid: GridSystem, points, params: Params, centers, o: float, seed: int | None = None):
    """Cell values with exact counts near the bicriterion centers and sampled counts elsewhere.

    Returns (values, pis) where pis[i] is the level-i sampling probability.
    """
    P = np.asarray(points, dtype=np.int64).reshape(-1, grid.d)
    Zp = np.asarray(centers, dtype=float).reshape(-1, grid.d)
    seed = params.seed if seed is None else seed
    pkeys = grid.point_keys(P)
    values: dict[int, Fraction] = {0: Fraction(len(P))}
    pis = []
    for level in range(grid.L + 1):
        w = grid.width(level)
        pi = pi_general(params, level, max(o, 1))
        pis.append(pi)
        keys = grid.point_cell_keys(P, level)
        ukeys, inv = np.unique(keys, return_inverse=True)
        _, idx = grid.decode_keys(ukeys)
        lo = grid.centers(level, idx) - (0 if level == grid.L else w / 2)
        gap = np.maximum(np.maximum(lo[:, None, :] - Zp[None], Zp[None] - (lo[:, None, :] + w)), 0)
        near = np.sqrt((gap**2).sum(-1)).min(axis=1) <= w / (2 * grid.d)
        counts = np.bincount(inv, minlength=len(ukeys))
        picked = SampleHash(seed, -1, level).bits(pkeys, pi)
        sampled = np.bincount(inv, weights=picked, minlength=len(ukeys)).astype(np.int64)
        inv_pi = exact_inverse(pi)
        for key, is_near, c, s in zip(ukeys.tolist(), near.tolist(), counts.tolist(), sampled.tolist()):
            if is_near:
                values[key] = Fraction(c)
            elif s:
                values[key] = s * inv_pi
    return values, pis


def offline_construct(grid: GridSystem, points, params: Params, bicriterion, seed: int | None = None) -> Coreset:
    centers, o = bicriterion
    values, pis = offline_values(grid, points, params, centers, o, seed)
    cs = weights_from_values(grid, values, params.k)
    cs.info.update(pis=pis, o=o)
    return cs


# streaming


def head_size(params: Params) -> float:
    return (E + 2) * (params.L + 1) * params.k / params.rho


def hh_accuracy(params: Params) -> float:
    d, L = params.d, params.L
    return params.eps * math.sqrt(params.rho / (params.lambdas.l7 * params.k * d**3 * (L + 1) ** 3))


def kset_capacity(params: Params) -> int:
    d, L, k, eps, rho = params.d, params.L, params.k, params.eps, params.rho
    raw = (2 + E) * (L + 1) * k / rho + 24 * d**4 * (L + 1) ** 3 * k / eps**2 * math.log(1 / rho)
    return max(1, math.ceil(params.constant_scale * raw))


def level_candidates(grid: GridSystem, level: int, prev_keys: Sequence[int]) -> np.ndarray:
    """Cells to score at a level: all domain cells, or children of the previous hits."""
    if grid.domain_cell_count(level) <= CANDIDATE_LIMIT:
        return grid.domain_cell_keys(level)
    return grid.child_keys(level - 1, np.asarray(prev_keys, dtype=np.uint64))


def get_freq(key: int, top: dict[int, int], sampled: dict[int, int], pi: float) -> Fraction:
    """Heavy hitter estimate for top cells, else the sampled count scaled by 1/pi."""
    if key in top:
        return Fraction(top[key])
    return sampled.get(key, 0) * exact_inverse(pi)


class GeneralStream:
    """Streaming sketch for the generally weighted coreset.

    Holds a heavy hitter sketch per level and a K-Set per (guess, level) fed
    with sampled cell keys. Guesses whose sampling probability is 1 at a level
    share one K-Set there, since they would receive identical input.
    """

    mode = "general"

    def __init__(self, params: Params, grid: GridSystem | None = None):
        self.params = params
        self.grid = grid or GridSystem(params)
        self.L = params.L
        self.ladder = GuessLadder(params.d, params.side)
        self.m = 0
        self.capacity = kset_capacity(params)
        self.k_head = head_size(params)
        self.eps_hh = hh_accuracy(params)
        universe = params.side**params.d
        self.hh = [
            HeavyHitterSketch(universe, self.k_head, self.eps_hh, params.rho / (self.L + 1),
                              seed=derive_seed(params.seed, "hh", i), scale=params.constant_scale)
            for i in range(self.L + 1)
        ]
        self.pi = [[pi_general(params, i, o) for i in range(self.L + 1)] for o in self.ladder.values]
        self.sketches: dict[tuple, KSet] = {}

    def _sketch_name(self, j: int, i: int) -> tuple:
        return ("full", i) if self.pi[j][i] >= 1.0 else (j, i)

    def _sketch(self, name: tuple) -> KSet:
        if name not in self.sketches:
            i = name[1]
            self.sketches[name] = KSet(self.capacity, self.params.rho / (self.L + 1),
                                       seed=derive_seed(self.params.seed, "ks", i))
        return self.sketches[name]

    def update(self, u: StreamUpdate) -> None:
        self.update_points(np.array([u.point], dtype=np.int64), np.array([int(u.op)], dtype=np.int64))

    def update_points(self, points, signs) -> None:
        P = np.asarray(points, dtype=np.int64).reshape(-1, self.params.d)
        signs = np.asarray(signs, dtype=np.int64).reshape(-1)
        if len(P) == 0:
            return
        self.m += int(signs.sum())
        pkeys = self.grid.point_keys(P)
        for i in range(self.L + 1):
            ck = self.grid.point_cell_keys(P, i)
            self.hh[i].update_many(ck, signs)
            full_done = False
            for j in range(len(self.ladder)):
                pi = self.pi[j][i]
                if pi >= 1.0:
                    if not full_done:
                        self._sketch(("full", i)).update_many(ck, signs)
                        full_done = True
                    continue
                bits = SampleHash(self.params.seed, j, i).bits(pkeys, pi)
                if bits.any():
                    self._sketch((j, i)).update_many(ck[bits], signs[bits])

    def _retrieve_all(self):
        cache: dict[tuple, dict | None] = {}
        failures: dict[int, list[int]] = {}
        for j in range(len(self.ladder)):
            failed = []
            for i in range(self.L + 1):
                name = self._sketch_name(j, i)
                if name not in cache:
                    sk = self.sketches.get(name)
                    try:
                        cache[name] = {} if sk is None else sk.retrieve()
                    except KSetFailure:
                        cache[name] = None
                if cache[name] is None:
                    failed.append(i)
            if not failed:
                return j, [cache[self._sketch_name(j, i)] for i in range(self.L + 1)], failures
            failures[j] = failed
        raise AllGuessesFailed(failures)

    def values(self) -> tuple[dict[int, Fraction], dict]:
        j, sampled, failures = self._retrieve_all()
        values: dict[int, Fraction] = {0: Fraction(self.m)}
        prev: list[int] = []
        top_m = math.floor(self.k_head)
        for i in range(self.L + 1):
            cands = level_candidates(self.grid, i, prev)
            top = self.hh[i].query(cands).top(top_m).as_dict()
            prev = list(top)
            pi = self.pi[j][i]
            for key in set(top) | set(sampled[i]):
                v = get_freq(key, top, sampled[i], pi)
                if v != 0:
                    values[key] = v
        info = {"o_star": self.ladder.values[j], "o_index": j, "failures": failures,
                "pis": list(self.pi[j])}
        return values, info

    def query(self) -> Coreset:
        values, info = self.values()
        cs = weights_from_values(self.grid, values, self.params.k)
        cs.info.update(info)
        return cs

    # state

    def state(self) -> dict[str, np.ndarray]:
        out = {"m": np.array([self.m], dtype=np.int64)}
        for i, h in enumerate(self.hh):
            out[f"hh/{i}"] = h.table.copy()
        for name in sorted(self.sketches, key=str):
            sk = self.sketches[name]
            if sk.is_empty():
                continue
            for f, arr in sk.state().items():
                out[f"ks/{name[0]}/{name[1]}/{f}"] = arr
        return out

    @property
    def nbytes(self) -> int:
        return sum(h.nbytes for h in self.hh) + sum(s.nbytes for s in self.sketches.values())

    def to_bytes(self) -> bytes:
        meta = {"kind": self.mode, "params": params_to_dict(self.params), "shift": list(self.grid.shift)}
        return _pack(meta, self.state())

    @classmethod
    def from_bytes(cls, blob: bytes):
        meta, arrays = _unpack(blob)
        if meta.get("kind") != cls.mode:
            raise ValueError(f"snapshot is not a {cls.mode} stream state")
        params = params_from_dict(meta["params"])
        st = cls(params, GridSystem(params, meta["shift"]))
        st._load_arrays(arrays)
        return st

    def _load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.m = int(arrays["m"][0])
        for i, h in enumerate(self.hh):
            h.table = arrays[f"hh/{i}"].astype(np.int64)
        groups: dict[tuple, dict] = {}
        for name, arr in arrays.items():
            if name.startswith("ks/"):
                _, a, b, f = name.split("/")
                key = (a if a == "full" else int(a), int(b))
                groups.setdefault(key, {})[f] = arr
        for key, fields in groups.items():
            self._sketch(key).load_state(fields)


def params_to_dict(p: Params) -> dict:
    from dataclasses import asdict
    return asdict(p)


def params_from_dict(data: dict) -> Params:
    from .model import Lambdas
    data = dict(data)
    data["lambdas"] = Lambdas(**data["lambdas"])
    return Params(**data)


def replay(stream, updates: Sequence[StreamUpdate]):
    for u in updates:
        stream.update(u)
    return stream


__all__ = [
    "AllGuessesFailed",
    "GeneralStream",
    "Op",
    "get_freq",
    "head_size",
    "hh_accuracy",
    "kset_capacity",
    "offline_construct",
    "offline_values",
]

"""Ground truth: exhaustive k-median, heuristic solvers, coreset verification,
and the near-cell statistic of randomly shifted grids."""

from __future__ import annotations

import contextlib
import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .coreset import Coreset, cost, dist_to_set
from .grid import GridSystem
from .hashing import derive_seed
from .model import Params

ENUMERATION_GUARD = 10**7
MEMORY_GUARD = 1 << 26


class TooLarge(Exception):
    """The requested enumeration exceeds the guard."""


@contextlib.contextmanager
def _sink(target):
    """Open a path for writing, or pass an already open text stream through."""
    if hasattr(target, "write"):
        yield target
    else:
        with open(target, "w", newline="") as fh:
            yield fh


def grid_points(delta: int, d: int) -> np.ndarray:
    axes = [np.arange(1, delta + 1, dtype=np.int64)] * d
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)


def count_center_sets(n_candidates: int, k: int) -> int:
    """Number of multisets of size k, which covers every center set of size <= k."""
    return math.comb(n_candidates + k - 1, k)


def enumerate_costs(D: np.ndarray, W: np.ndarray, k: int):
    """Costs of every size-k multiset of candidate columns.

    D is (n, G) point-to-candidate distances, W is (r, n) weight rows.
    Yields (combos (m, k), costs (r, m)) blocks in lexicographic order.
    """
    G = D.shape[1]

    def rec(prefix: list[int], start: int, curmin):
        if len(prefix) == k - 1:
            block = D[:, start:] if curmin is None else np.minimum(curmin[:, None], D[:, start:])
            combos = np.empty((G - start, k), dtype=np.int64)
            combos[:, : k - 1] = prefix
            combos[:, k - 1] = np.arange(start, G)
            yield combos, W @ block
            return
        for a in range(start, G):
            col = D[:, a]
            yield from rec(prefix + [a], a, col if curmin is None else np.minimum(curmin, col))

    yield from rec([], 0, None)


def _guard(n_rows: int, n_candidates: int, k: int) -> None:
    if count_center_sets(n_candidates, k) > ENUMERATION_GUARD:
        raise TooLarge(f"{count_center_sets(n_candidates, k)} center sets exceed the guard")
    if n_rows * n_candidates > MEMORY_GUARD:
        raise TooLarge("distance table too large")


def exact_kmedian(points, k: int, delta: int, d: int, weights=None):
    """Exhaustive optimum over all center sets of size <= k from [delta]^d."""
    P = np.asarray(points, dtype=float).reshape(-1, d)
    cand = grid_points(delta, d)
    _guard(len(P), len(cand), k)
    if len(P) == 0:
        return (tuple(int(x) for x in cand[0]),), 0.0
    w = np.ones(len(P)) if weights is None else np.asarray(weights, dtype=float)
    D = cdist(P, cand)
    best, best_combo = math.inf, None
    for combos, costs in enumerate_costs(D, w[None, :], k):
        j = int(np.argmin(costs[0]))
        if costs[0, j] < best - 1e-12:
            best, best_combo = float(costs[0, j]), combos[j]
    Z = tuple(sorted({tuple(int(x) for x in cand[c]) for c in best_combo}))
    return Z, best


# heuristics


def _greedy_init(D: np.ndarray, w: np.ndarray, k: int) -> list[int]:
    chosen: list[int] = []
    cur = np.full(D.shape[0], np.inf)
    for _ in range(min(k, D.shape[1])):
        trial = w @ np.minimum(cur[:, None], D) if chosen else w @ D
        if chosen:
            trial[chosen] = np.inf
        j = int(np.argmin(trial))
        chosen.append(j)
        cur = np.minimum(cur, D[:, j])
    return chosen


def local_search(D: np.ndarray, w: np.ndarray, k: int, tol: float = 1e-9, max_rounds: int = 1000) -> list[int]:
    """Single-swap local search over the columns of D; returns chosen column indices."""
    G = D.shape[1]
    if k >= G:
        return list(range(G))
    chosen = _greedy_init(D, w, k)
    current = float(w @ D[:, chosen].min(axis=1))
    for _ in range(max_rounds):
        best_gain, best_swap = 0.0, None
        for slot in range(len(chosen)):
            rest = [c for s, c in enumerate(chosen) if s != slot]
            base = D[:, rest].min(axis=1) if rest else np.full(D.shape[0], np.inf)
            trial = w @ np.minimum(base[:, None], D)
            trial[chosen] = np.inf
            j = int(np.argmin(trial))
            gain = current - float(trial[j])
            if gain > best_gain:
                best_gain, best_swap = gain, (slot, j)
        if best_swap is None or best_gain <= tol * max(current, 1e-300):
            break
        chosen[best_swap[0]] = best_swap[1]
        current = float(w @ D[:, chosen].min(axis=1))
    return chosen


def candidate_centers(positions: np.ndarray, delta: int | None) -> np.ndarray:
    """Integer candidates from coreset positions: rounded, clipped to the domain, deduplicated."""
    pos = np.floor(np.asarray(positions, dtype=float) + 0.5)
    if delta is not None:
        pos = np.clip(pos, 1, delta)
    return np.unique(pos, axis=0)


def weighted_local_search(S: Coreset, k: int, delta: int | None = None, max_candidates: int = 4096,
                          seed: int = 0) -> np.ndarray:
    """Approximate k-median centers for a non-negatively weighted coreset."""
    if len(S) and S.weights.min() < 0:
        raise ValueError("local search needs non-negative weights")
    if len(S) == 0:
        return np.ones((1, S.d))
    delta = S.delta if delta is None else delta
    cand = candidate_centers(S.positions, delta)
    if len(cand) > max_candidates:
        rng = np.random.default_rng(derive_seed(seed, "ls-candidates"))
        cand = cand[np.sort(rng.choice(len(cand), max_candidates, replace=False))]
    D = cdist(S.positions, cand)
    chosen = local_search(D, S.weights, k)
    return cand[sorted(chosen)]


def farthest_points(P: np.ndarray, start: np.ndarray, total: int) -> np.ndarray:
    centers = [c for c in start]
    dist = dist_to_set(P, np.array(centers)) if centers else np.full(len(P), np.inf)
    while len(centers) < total and len(P):
        j = int(np.argmax(dist))
        if dist[j] == 0:
            break
        centers.append(P[j])
        dist = np.minimum(dist, np.sqrt(((P - P[j]) ** 2).sum(axis=1)))
    return np.array(centers)


def bicriterion(points, k: int, seed: int = 0, sample: int = 4096, n_candidates: int = 512):
    """At most 10k centers Z' and a cost bound o >= max(1, OPT).

    o is the cost of a local-search k-solution, so it is a genuine upper bound
    on OPT; Z' adds farthest-point centers to that solution.
    """
    P = np.asarray(points, dtype=float)
    if len(P) == 0:
        raise ValueError("bicriterion needs a nonempty point set")
    U, mult = np.unique(P, axis=0, return_counts=True)
    rng = np.random.default_rng(derive_seed(seed, "bicriterion"))
    pick = np.arange(len(U)) if len(U) <= sample else np.sort(rng.choice(len(U), sample, replace=False))
    base, w = U[pick], mult[pick].astype(float)
    cand = base if len(base) <= n_candidates else base[np.sort(rng.choice(len(base), n_candidates, replace=False))]
    chosen = local_search(cdist(base, cand), w, k)
    Zk = cand[sorted(chosen)]
    o = max(1.0, cost(U, Zk, mult))
    if len(U) <= 10 * k:
        return U, o, Zk
    return farthest_points(U, Zk, 10 * k), o, Zk


# verification


@dataclass
class VerificationReport:
    centers: list[tuple]
    cost_P: np.ndarray
    cost_S: np.ndarray
    eps: float
    mode: str
    opt: float | None = None
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    @property
    def rel_err(self) -> np.ndarray:
        cp, cs = self.cost_P, self.cost_S
        with np.errstate(divide="ignore", invalid="ignore"):
            err = np.abs(cs - cp) / cp
        err[(cp == 0) & (cs == 0)] = 0.0
        err[(cp == 0) & (cs != 0)] = np.inf
        return err

    @property
    def max_rel_err(self) -> float:
        return float(self.rel_err.max()) if len(self.cost_P) else 0.0

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.eps

    def __len__(self) -> int:
        return len(self.cost_P)

    def rows(self):
        err = self.rel_err
        for j, Z in enumerate(self.centers):
            zid = "|".join("_".join(_fmt(x) for x in z) for z in Z)
            yield zid, float(self.cost_P[j]), float(self.cost_S[j]), float(err[j])

    def write_csv(self, path) -> None:
        with _sink(path) as fh:
            w = csv.writer(fh)
            w.writerow(["z_id", "cost_P", "cost_S", "rel_err"])
            for row in self.rows():
                w.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3])])
            opt = "" if self.opt is None else repr(self.opt)
            w.writerow([f"summary mode={self.mode} eps={self.eps} pass={int(self.passed)} seed={self.seed}",
                        opt, "", repr(self.max_rel_err)])


def _fmt(x) -> str:
    x = float(x)
    return str(int(x)) if x.is_integer() else repr(x)


def _costs_for_sets(P, S: Coreset, sets: Sequence[np.ndarray]):
    cp = np.array([cost(P, Z) for Z in sets])
    cs = np.array([S.cost(Z) for Z in sets])
    return cp, cs


def verify_coreset(points, S: Coreset, k: int, eps: float, mode: str = "exhaustive", n_random: int = 1000,
                   seed: int = 0, delta: int | None = None, grid_size: int = 64) -> VerificationReport:
    """Compare cost(P, Z) with cost(S, Z) over a family of center sets.

    exhaustive: every center set of size <= k from [delta]^d.
    random: n_random uniform k-subsets, plus the exact optimum when feasible
    and a local-search solution.
    grid-scan: every single center on a grid_size^d lattice spanning the domain.
    """
    P = np.asarray(points, dtype=float).reshape(-1, S.d)
    d = S.d
    delta = S.delta if delta is None else delta
    if mode == "exhaustive":
        cand = grid_points(delta, d)
        _guard(len(P) + len(S), len(cand), k)
        D = cdist(np.vstack([P, S.positions]), cand)
        W = np.zeros((2, len(P) + len(S)))
        W[0, : len(P)] = 1.0
        W[1, len(P):] = S.weights
        sets, cps, css = [], [], []
        for combos, costs in enumerate_costs(D, W, k):
            sets.append(combos)
            cps.append(costs[0])
            css.append(costs[1])
        combos = np.concatenate(sets)
        cp, cs = np.concatenate(cps), np.concatenate(css)
        centers = [tuple(tuple(int(x) for x in cand[c]) for c in sorted(set(row.tolist()))) for row in combos]
        return VerificationReport(centers, cp, cs, eps, mode, float(cp.min()) if len(cp) else 0.0, seed)
    if mode == "random":
        rng = np.random.default_rng(derive_seed(seed, "verify-random"))
        sets = [rng.integers(1, delta + 1, size=(k, d)) for _ in range(n_random)]
        opt = None
        try:
            Zs, opt = exact_kmedian(P, k, delta, d)
            sets.append(np.array(Zs))
        except TooLarge:
            pass
        if len(P):
            _, _, Zk = bicriterion(P, k, seed)
            sets.append(np.floor(Zk + 0.5))
        cp, cs = _costs_for_sets(P, S, sets)
        centers = [tuple(tuple(int(x) for x in z) for z in Z) for Z in sets]
        return VerificationReport(centers, cp, cs, eps, mode, opt, seed)
    if mode == "grid-scan":
        axis = np.unique(np.round(np.linspace(1, delta, grid_size)).astype(np.int64))
        cand = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d).astype(float)
        cp = _single_center_costs(P, np.ones(len(P)), cand)
        cs = _single_center_costs(S.positions, S.weights, cand)
        centers = [(tuple(int(x) for x in c),) for c in cand]
        rep = VerificationReport(centers, cp, cs, eps, mode, None, seed)
        rep.extra["axis"] = axis
        return rep
    raise ValueError(f"unknown verification mode {mode!r}")


def _single_center_costs(X: np.ndarray, w: np.ndarray, cand: np.ndarray) -> np.ndarray:
    out = np.zeros(len(cand))
    if len(X) == 0:
        return out
    step = max(1, MEMORY_GUARD // 8 // max(len(X), 1))
    for s in range(0, len(cand), step):
        out[s:s + step] = w @ cdist(X, cand[s:s + step])
    return out


# near cells of shifted grids


@dataclass
class NearCellStats:
    levels: list[int]
    mean: np.ndarray
    se: np.ndarray
    bound: float
    trials: int

    @property
    def ok(self) -> np.ndarray:
        return self.mean <= self.bound + 3 * self.se

    def write_csv(self, path) -> None:
        with _sink(path) as fh:
            w = csv.writer(fh)
            w.writerow(["level", "mean", "se", "bound", "ok"])
            for j, lv in enumerate(self.levels):
                w.writerow([lv, repr(float(self.mean[j])), repr(float(self.se[j])), repr(self.bound),
                            int(self.ok[j])])


def near_cell_counts(side: int, d: int, level: int, Z, shifts: np.ndarray, discrete: bool = True) -> np.ndarray:
    """Per shift, the number of level cells within side / 2^(level+1) / d of some center."""
    Z = np.asarray(Z, dtype=np.int64).reshape(-1, d)
    V = np.asarray(shifts, dtype=np.int64).reshape(-1, d)
    W = side >> level
    thr = W / (2 * d)
    rel = Z[None, :, :] - V[:, None, :]
    n = np.floor_divide(rel, W)
    r = rel - n * W
    offsets = np.array(list(itertools.product((-1, 0, 1), repeat=d)), dtype=np.int64)
    low = (r + 1) if discrete else r
    gap = np.where(offsets[None, None, :, :] == -1, low[:, :, None, :],
                   np.where(offsets[None, None, :, :] == 1, (W - r)[:, :, None, :], 0))
    near = np.sqrt((gap.astype(float) ** 2).sum(axis=-1)) <= thr
    cells = n[:, :, None, :] + offsets[None, None, :, :]
    base = 2 * side + 8
    ids = ((cells + side + 4) * base ** np.arange(d, dtype=np.int64)).sum(axis=-1)
    ids = np.where(near, ids, -1).reshape(len(V), -1)
    ids.sort(axis=1)
    distinct = (ids[:, 0] >= 0).astype(np.int64)
    distinct += ((ids[:, 1:] != ids[:, :-1]) & (ids[:, 1:] >= 0)).sum(axis=1)
    return distinct


def near_cell_count(grid: GridSystem, Z, level: int, discrete: bool = True) -> int:
    return int(near_cell_counts(grid.side, grid.d, level, Z, np.array([grid.shift]), discrete)[0])


def near_cell_check(params: Params, Z, trials: int = 1000, seed: int | None = None,
                  discrete: bool = True) -> NearCellStats:
    """Mean number of near cells per level over fresh random shifts, against e * |Z|."""
    if trials < 100:
        raise ValueError("need at least 100 trials")
    seed = params.seed if seed is None else seed
    rng = np.random.default_rng(derive_seed(seed, "near-cells"))
    side, d, L = params.side, params.d, params.L
    Z = np.asarray(Z, dtype=np.int64).reshape(-1, d)
    shifts = rng.integers(0, side, size=(trials, d))
    means, ses = [], []
    for level in range(L + 1):
        c = near_cell_counts(side, d, level, Z, shifts, discrete).astype(float)
        means.append(c.mean())
        ses.append(c.std(ddof=1) / math.sqrt(trials))
    return NearCellStats(list(range(L + 1)), np.array(means), np.array(ses), math.e * len(Z), trials)

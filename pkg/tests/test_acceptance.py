"""One test per acceptance criterion, at the stated tolerances.

The summary section printed at the end of the pytest run lists PASS / FAIL
for each of these.
"""

import math
import time

import numpy as np

from helpers import tail_f2, zipf_turnstile
from dyncoreset.cli import build
from dyncoreset.coreset import exact_values, weights_from_values
from dyncoreset.eval import near_cell_check, verify_coreset
from dyncoreset.general import GeneralStream
from dyncoreset.grid import GridSystem
from dyncoreset.heavy_hitter import HeavyHitterSketch
from dyncoreset.kset import KSet, KSetFailure
from dyncoreset.model import Params
from dyncoreset.positive import PositiveStream, rectify_weights
from dyncoreset.presets import apply_preset
from dyncoreset.sparse_cells import SparseCells, SparseCellsFailure
from dyncoreset.streams import StreamFile, generate


def test_criterion_1_telescope_identity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    for inst in range(50):
        d = int(rng.integers(1, 3))
        delta = int(rng.choice([8, 16]))
        k = int(rng.integers(1, 3))
        n = int(rng.integers(1, 201))
        P = rng.integers(1, delta + 1, size=(n, d))
        p = Params(d=d, k=k, delta=delta, seed=inst)
        grid = GridSystem(p)
        cs = weights_from_values(grid, exact_values(grid, P), k)
        rep = verify_coreset(P, cs, k, 1e-9)
        worst = max(worst, rep.max_rel_err)
    assert worst <= 1e-9
    assert time.perf_counter() - t0 <= 60


def test_criterion_2_offline_construction():
    t0 = time.perf_counter()
    passed, sampled_levels = 0, []
    for seed in range(100):
        p = apply_preset(Params(d=2, k=2, delta=16, eps=0.25, rho=0.1, seed=seed), "offline-small")
        stream = generate("gaussian-mixture", 256, 2, 16, seed)
        cs, _, _ = build(stream, p, "offline")
        sampled_levels.append(sum(pi < 1 for pi in cs.info["pis"]))
        passed += verify_coreset(stream.live_points(), cs, 2, 0.25).passed
    assert min(sampled_levels) >= 2
    assert passed >= 85, f"{passed}/100 runs within eps"
    assert time.perf_counter() - t0 <= 600


def _random_turnstile(rng, delta, n_ins):
    """Inserts over [delta]^2 with at least 30% of all updates being deletions."""
    pts = rng.integers(1, delta + 1, size=(n_ins, 2))
    n_del = int(math.ceil(0.45 * n_ins))
    victims = rng.choice(n_ins, size=n_del, replace=False)
    events = [(float(j), 1, j) for j in range(n_ins)] + [(rng.uniform(j, n_ins), -1, j) for j in victims]
    events.sort(key=lambda e: (e[0], -e[1]))
    signs = np.array([e[1] for e in events], np.int64)
    return StreamFile(2, delta, signs, pts[[e[2] for e in events]])


def _same_state(a, b):
    sa, sb = a.state(), b.state()
    return sa.keys() == sb.keys() and all(np.array_equal(sa[k], sb[k]) for k in sa)


def test_criterion_3_dynamic_invariance():
    rng = np.random.default_rng(3)
    mismatches = 0
    for t in range(200):
        stream = _random_turnstile(rng, 16, int(rng.integers(10, 80)))
        assert (stream.signs < 0).mean() >= 0.3
        survivors = stream.live_points()
        p = apply_preset(Params(d=2, k=2, delta=16, seed=t), "stream-small")
        for cls in (GeneralStream, PositiveStream):
            full, live = cls(p), cls(p)
            full.update_points(stream.points, stream.signs)
            live.update_points(survivors, np.ones(len(survivors), np.int64))
            mismatches += not _same_state(full, live)
    assert mismatches == 0


def test_criterion_4_kset_contract():
    rng = np.random.default_rng(4)
    ok = wrong = 0
    for t in range(1000):
        ks = KSet(64, 0.01, seed=t)
        keys = rng.choice(2**40, size=120, replace=False).astype(np.uint64)
        mult = rng.integers(1, 4, size=50)
        ks.update_many(np.repeat(keys[:50], mult), 1)
        ks.update_many(keys[50:], 1)
        ks.update_many(keys[50:], -1)
        truth = dict(zip(keys[:50].tolist(), mult.tolist()))
        try:
            got = ks.retrieve()
        except KSetFailure:
            continue
        if got == truth:
            ok += 1
        else:
            wrong += 1
    assert wrong == 0
    assert ok >= 985, f"{ok}/1000 exact retrievals"


def test_criterion_5_heavy_hitter_contract():
    rng = np.random.default_rng(5)
    k, eps, delta = 10, 0.1, 0.05
    n_keys = 10**4
    violations = 0
    for t in range(500):
        keys, signs, freq = zipf_turnstile(rng, n_keys=n_keys, total=20000, s=1.1)
        hh = HeavyHitterSketch(n_keys, k, eps, delta, seed=t)
        hh.update_many(keys, signs)
        err = np.abs(hh.estimate(np.arange(n_keys, dtype=np.uint64)) - freq)
        violations += err.max() > eps * math.sqrt(tail_f2(freq, k))
    assert violations / 500 <= delta + 0.02


def _sparse_workload(rng, alpha, beta):
    """alpha occupied cells: three quarters below beta points, the rest dense."""
    n_sparse = 3 * alpha // 4
    occupancy = np.concatenate([rng.integers(1, beta, size=n_sparse),
                                rng.integers(beta, 5 * beta, size=alpha - n_sparse)])
    cells = rng.choice(2**30, size=alpha, replace=False).astype(np.uint64)
    pts = rng.choice(2**40, size=int(occupancy.sum()), replace=False).astype(np.uint64)
    return pts, np.repeat(cells, occupancy)


def test_criterion_6_sparse_cells():
    alpha, beta, delta = 64, 8, 0.05
    trials = 10**4
    rng = np.random.default_rng(6)
    incomplete = fabricated = fails = 0
    marginal_hit = marginal_total = 0
    for t in range(trials):
        pts, cells = _sparse_workload(rng, alpha, beta)
        # churn: extra points inserted and deleted again
        ghost = rng.choice(2**40, size=20).astype(np.uint64) | np.uint64(1 << 41)
        ghost_cells = rng.choice(cells, size=20)
        sc = SparseCells(alpha, beta, delta, seed=t)
        sc.update_many(ghost, ghost_cells, 1)
        sc.update_many(pts, cells, 1)
        sc.update_many(ghost, ghost_cells, -1)
        truth = dict(zip(pts.tolist(), cells.tolist()))
        uniq, counts = np.unique(cells, return_counts=True)
        occupancy = dict(zip(uniq.tolist(), counts.tolist()))
        sparse = {p for p, c in truth.items() if occupancy[c] < beta}
        try:
            got = sc.query()
        except SparseCellsFailure:
            fails += 1
        else:
            fabricated += sum(truth.get(p) != c for p, c in got.items())
            incomplete += not sparse <= set(got)
        single = sc.singles[0].query()
        marginal_hit += len(sparse & set(single))
        marginal_total += len(sparse)
        fabricated += sum(truth.get(p) != c for p, c in single.items())
    assert fabricated == 0
    assert incomplete == 0
    assert marginal_hit / marginal_total >= 0.9
    assert fails <= delta * trials


def test_criterion_7_positive_pipeline():
    # structure: 200 seeded runs, half clustered inserts and half with deletions
    bad, not_idem = [], 0
    quality = 0
    for seed in range(200):
        p = apply_preset(Params(d=2, k=2, delta=16, eps=0.25, rho=0.1, seed=seed), "stream-small")
        kind = "gaussian-mixture" if seed < 100 else "clusters-with-deletions"
        stream = generate(kind, 256 if seed < 100 else 200, 2, 16, seed)
        sk = PositiveStream(p)
        sk.update_points(stream.points, stream.signs)
        tree, _, _ = sk.weight_tree()
        fixed = rectify_weights(tree)
        again = rectify_weights(fixed)
        not_idem += (again.cell_weights != fixed.cell_weights or again.sample_weights != fixed.sample_weights)
        cs = sk.query()
        if cs.min_weight < 0 or cs.total_weight != sk.m:
            bad.append(seed)
        if seed < 100:
            quality += verify_coreset(stream.live_points(), cs, 2, 4 * 0.25).passed
    assert not bad, f"runs with negative weight or wrong total: {bad}"
    assert not_idem == 0
    assert quality >= 85, f"{quality}/100 runs within 4 eps"


def test_criterion_8_gaussian_reproduction():
    t0 = time.perf_counter()
    p = apply_preset(Params(d=2, k=1, delta=512, seed=0), "gaussian-512")
    stream = generate("gaussian-mixture", 65536, 2, 512, 0)
    cs, stats, _ = build(stream, p, "positive")
    rep = verify_coreset(stream.live_points(), cs, 1, 0.15, mode="grid-scan", grid_size=64)
    elapsed = time.perf_counter() - t0
    assert len(cs) <= 500, f"{len(cs)} entries"
    assert rep.max_rel_err <= 0.15, f"max relative error {rep.max_rel_err:.3f}"
    assert elapsed <= 15 * 60


def test_criterion_9_near_cell_statistics():
    failing = []
    for d in (1, 2, 4):
        for size in (1, 4):
            p = Params(d=d, k=size, delta=64, seed=10 * d + size)
            rng = np.random.default_rng(p.seed)
            Z = rng.integers(1, 65, size=(size, d))
            stats = near_cell_check(p, Z, trials=1000)
            if not stats.ok.all():
                failing.append((d, size, stats.levels, stats.mean.round(3).tolist()))
    assert not failing, failing

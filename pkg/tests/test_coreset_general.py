import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dyncoreset.coreset import Coreset, cost, exact_values, level_cost, level_cost_hat, telescoped_cost, \
    weights_from_values
from dyncoreset.eval import bicriterion, exact_kmedian, grid_points, verify_coreset
from dyncoreset.general import AllGuessesFailed, GeneralStream, get_freq, offline_construct, offline_values
from dyncoreset.grid import GridSystem
from dyncoreset.model import Lambdas, Op, Params, StreamUpdate
from dyncoreset.presets import apply_preset
from dyncoreset.streams import generate


def small_instance(seed, d=2, delta=8, n=30):
    rng = np.random.default_rng(seed)
    P = rng.integers(1, delta + 1, size=(n, d))
    return Params(d=d, k=2, delta=delta, seed=seed), P


def test_cost_example():
    assert cost([(1,), (2,), (9,)], [(2,)]) == 8.0


def test_cost_linear_in_weights():
    Z = [(3, 7), (9, 1)]
    a = Coreset(2, 16, 1, [(4, 4), (4, 4)], [2.0, -1.0], [0, 0], ["cell", "cell"])
    b = Coreset(2, 16, 1, [(4, 4)], [1.0], [0], ["cell"])
    assert a.cost(Z) == pytest.approx(b.cost(Z))


@given(st.integers(0, 2**32))
def test_cost_matches_summation_oracle(seed):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 20, size=(15, 3))
    w = rng.normal(size=15)
    Z = rng.uniform(0, 20, size=(3, 3))
    ref = sum(wi * min(np.sqrt(((x - z) ** 2).sum()) for z in Z) for x, wi in zip(X, w))
    assert cost(X, Z, w) == pytest.approx(ref, rel=1e-9, abs=1e-9)


@given(st.integers(0, 2**32))
def test_telescope_identity_exact_values(seed):
    params, P = small_instance(seed)
    g = GridSystem(params)
    vals = exact_values(g, P)
    rng = np.random.default_rng(seed)
    for _ in range(5):
        Z = rng.integers(1, 9, size=(2, 2))
        assert telescoped_cost(g, vals, Z) == pytest.approx(cost(P, Z), rel=1e-9)


@given(st.integers(0, 2**32))
def test_level_cost_matches_per_point_oracle(seed):
    params, P = small_instance(seed, n=12)
    g = GridSystem(params)
    Z = np.array([[2, 3], [7, 7]])

    def d(x):
        return min(np.sqrt(((np.asarray(x) - z) ** 2).sum()) for z in Z)

    for i in range(g.L + 1):
        ref = sum(d(g.center_of(g.cell_of(p, i))) - d(g.center_of(g.cell_of(p, i - 1))) for p in P.tolist())
        assert level_cost(g, P, i, Z) == pytest.approx(ref, abs=1e-9)
        assert level_cost_hat(g, exact_values(g, P), i, Z) == pytest.approx(ref, abs=1e-9)


def test_level_cost_hat_zero_values():
    params, P = small_instance(1)
    g = GridSystem(params)
    vals = {key: 0 for key in exact_values(g, P)}
    assert all(level_cost_hat(g, vals, i, [(1, 1)]) == 0 for i in range(-1, g.L + 1))


def test_exact_weights_are_the_point_set():
    params = Params(d=2, k=1, delta=8, seed=4)
    g = GridSystem(params)
    P = np.array([[1, 1], [3, 5], [8, 8], [3, 5]])
    cs = weights_from_values(g, exact_values(g, P))
    assert set(cs.levels.tolist()) == {g.L}
    got = sorted((tuple(p), w) for p, w in zip(cs.positions.tolist(), cs.weights.tolist()))
    assert got == [((1.0, 1.0), 1.0), ((3.0, 5.0), 2.0), ((8.0, 8.0), 1.0)]
    assert cs.total_weight == 4


def test_single_point_exact():
    params = Params(d=1, k=1, delta=8, seed=2)
    g = GridSystem(params)
    cs = weights_from_values(g, exact_values(g, [[5]]))
    assert cs.positions.tolist() == [[5.0]] and cs.weights.tolist() == [1.0]


def test_perturbed_internal_cell():
    params = Params(d=2, k=1, delta=8, seed=6)
    g = GridSystem(params)
    P = np.array([[1, 2], [2, 2], [7, 7], [5, 1]])
    vals = {k: Fraction(v) for k, v in exact_values(g, P).items()}
    target = int(g.point_cell_keys(P[:1], 1)[0])
    vals[target] += 3
    cs = weights_from_values(g, vals)
    # direct recomputation: weight = value minus the values of the cell's children
    lv, idx = g.decode_keys(np.fromiter(vals, dtype=np.uint64))
    expect = {}
    for key, level in zip(vals, lv.tolist()):
        if key == 0:
            kids = [c for c, l2 in zip(vals, lv.tolist()) if l2 == 0]
        elif level == g.L:
            kids = []
        else:
            kids = [c for c, l2 in zip(vals, lv.tolist()) if l2 == level + 1
                    and int(g.parent_keys(level + 1, np.array([c], dtype=np.uint64))[0]) == key]
        expect[key] = vals[key] - sum(vals[c] for c in kids)
    nonzero = sorted(float(w) for w in expect.values() if w != 0)
    assert sorted(cs.weights.tolist()) == pytest.approx(nonzero)
    assert expect[target] == 3
    parent = int(g.parent_keys(1, np.array([target], dtype=np.uint64))[0])
    assert expect[parent] == -3
    assert cs.total_weight == len(P)


def test_text_roundtrip(tmp_path):
    cs = Coreset(2, 16, 2, [(1.5, 2.0), (3, 4)], [0.25, -2.0], [1, 4], ["cell", "sample"], Fraction(7, 2))
    path = tmp_path / "c.txt"
    cs.write(path)
    back = Coreset.read(path)
    assert back.to_text() == cs.to_text()
    assert back.positions.tolist() == cs.positions.tolist()
    assert path.read_text().splitlines()[0] == "# coreset d=2 delta=16 k=2 total_weight=3.5"


def test_offline_exact_when_sampling_is_trivial():
    params = Params(d=2, k=2, delta=4, seed=3)
    P = generate("uniform", 10, 2, 4, 3).live_points()
    g = GridSystem(params)
    Zp, o, _ = bicriterion(P, 2)
    cs = offline_construct(g, P, params, (Zp, o))
    assert all(p == 1.0 for p in cs.info["pis"])
    assert verify_coreset(P, cs, 2, 1e-9, mode="exhaustive").max_rel_err <= 1e-9


@given(st.integers(0, 2**32))
def test_offline_total_weight_is_exact(seed):
    params = apply_preset(Params(d=2, k=2, delta=16, seed=seed), "offline-small")
    P = generate("gaussian-mixture", 120, 2, 16, seed).live_points()
    g = GridSystem(params)
    Zp, o, _ = bicriterion(P, 2, seed)
    cs = offline_construct(g, P, params, (Zp, o))
    assert cs.total_weight == len(P)
    assert sum(cs.info["exact_weights"], Fraction(0)) == len(P)


def test_offline_sampled_cells_use_inverse_probability():
    params = Params(d=1, k=1, delta=64, seed=1, constant_scale=1e-4)
    P = np.arange(1, 65).reshape(-1, 1)
    g = GridSystem(params)
    vals, pis = offline_values(g, P, params, [[1]], 100.0)
    for key, v in vals.items():
        if key == 0:
            continue
        level = int(g.decode_keys(np.array([key], dtype=np.uint64))[0][0])
        c = Fraction(v) * Fraction(pis[level])
        assert v == int(v) or abs(c - round(c)) < 1e-9


def test_level_cost_estimates_harness():
    # when every level's estimation error is within eps OPT / (L + 1), the total is within eps OPT
    for seed in range(10):
        params = apply_preset(Params(d=2, k=1, delta=16, seed=seed), "offline-small")
        P = generate("gaussian-mixture", 80, 2, 16, seed).live_points()
        g = GridSystem(params)
        Zp, o, _ = bicriterion(P, 1, seed)
        vals, _ = offline_values(g, P, params, Zp, o, seed)
        _, OPT = exact_kmedian(P, 1, 16, 2)
        bound = params.eps * OPT / (g.L + 2)
        for z in grid_points(16, 2)[::7]:
            Z = z[None, :]
            per_level = [abs(level_cost(g, P, i, Z) - level_cost_hat(g, vals, i, Z)) for i in range(-1, g.L + 1)]
            if max(per_level) <= bound:
                assert abs(telescoped_cost(g, vals, Z) - cost(P, Z)) <= params.eps * OPT + 1e-9


def test_get_freq_examples():
    assert get_freq(5, {5: 11}, {5: 3}, 0.5) == 11
    assert get_freq(6, {5: 11}, {}, 0.5) == 0
    assert get_freq(6, {}, {6: 3}, 0.5) == 6


def stream_params(seed=0, delta=16):
    return apply_preset(Params(d=2, k=2, delta=delta, seed=seed), "stream-small")


def _states_equal(a, b):
    sa, sb = a.state(), b.state()
    return sa.keys() == sb.keys() and all(np.array_equal(sa[k], sb[k]) for k in sa)


def test_insert_delete_restores_state():
    s, ref = GeneralStream(stream_params()), GeneralStream(stream_params())
    s.update_points([[3, 3], [4, 9]], [1, 1])
    ref.update_points([[3, 3], [4, 9]], [1, 1])
    s.update(StreamUpdate(Op.INSERT, (7, 7)))
    s.update(StreamUpdate(Op.DELETE, (7, 7)))
    assert s.m == ref.m and _states_equal(s, ref)


def test_one_insert_touches_every_level_once():
    s = GeneralStream(stream_params())
    s.update(StreamUpdate(Op.INSERT, (5, 5)))
    assert len(s.hh) == s.L + 1
    for h in s.hh:
        assert int(np.abs(h.table).sum()) == h.rows


def test_orders_give_identical_state():
    rng = np.random.default_rng(5)
    pts = rng.integers(1, 17, size=(40, 2))
    a, b = GeneralStream(stream_params()), GeneralStream(stream_params())
    a.update_points(pts, np.ones(40, np.int64))
    perm = rng.permutation(40)
    for j in perm:
        b.update(StreamUpdate(Op.INSERT, tuple(pts[j])))
    assert _states_equal(a, b)


def test_small_stream_is_exact():
    params = Params(d=2, k=2, delta=8, seed=2, constant_scale=1e-4)
    P = generate("uniform", 25, 2, 8, 2).live_points()
    s = GeneralStream(params)
    s.update_points(P, np.ones(len(P), np.int64))
    cs = s.query()
    assert cs.info["o_index"] == 0 and all(p == 1.0 for p in cs.info["pis"])
    assert verify_coreset(P, cs, 2, 1e-9, mode="exhaustive").max_rel_err <= 1e-9


def test_stream_total_weight_and_sampling_active():
    params = stream_params(seed=3)
    st_ = generate("clusters-with-deletions", 200, 2, 16, 3)
    s = GeneralStream(params)
    s.update_points(st_.points, st_.signs)
    cs = s.query()
    assert cs.total_weight == s.m == 100
    assert min(cs.info["pis"]) < 1


def test_empty_stream():
    cs = GeneralStream(stream_params()).query()
    assert len(cs) == 0 and cs.total_weight == 0


def test_snapshot_roundtrip():
    params = stream_params(seed=9)
    st_ = generate("clusters-with-deletions", 100, 2, 16, 9)
    s = GeneralStream(params)
    s.update_points(st_.points, st_.signs)
    back = GeneralStream.from_bytes(s.to_bytes())
    assert _states_equal(s, back) and back.grid.shift == s.grid.shift
    assert back.query().to_text() == s.query().to_text()


def test_all_guesses_failed():
    # capacity 1 with sampling probability 1 everywhere cannot hold two cells
    params = Params(d=2, k=2, delta=16, constant_scale=1e-9, lambdas=Lambdas(general=3e9, l7=1e-3))
    s = GeneralStream(params)
    P = generate("uniform", 60, 2, 16, 1).live_points()
    s.update_points(P, np.ones(len(P), np.int64))
    with pytest.raises(AllGuessesFailed) as info:
        s.query()
    assert set(info.value.failures) == set(range(len(s.ladder)))

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dyncoreset.hashing import GuessLadder, KeyedHash, SampleHash, derive_seed, pi_general, pi_positive, \
    point_keys, points_from_keys, sample_bit, threshold64
from dyncoreset.model import Lambdas, Params

# frozen from a plain-float evaluation of the sampling formula (see test below)
PI_EXAMPLE_SCALED = 0.4099636664656106


def _pi_general_reference(d, k, delta, eps, rho, o, i, c):
    L = math.ceil(math.log2(delta))
    v = c * (L + 1) ** 2 * delta * d**2 / (2**i * eps**2 * o) * math.log(2 * (L + 1) * delta ** (k * d) / rho)
    return min(v, 1.0)


def test_pi_general_example_clamps_at_scale_one():
    p = Params(d=2, k=1, delta=8, eps=0.25, rho=0.1)
    assert pi_general(p, 3, 64) == 1.0
    assert _pi_general_reference(2, 1, 8, 0.25, 0.1, 64, 3, 3.0) == 1.0


def test_pi_general_example_scaled_matches_reference():
    p = Params(d=2, k=1, delta=8, eps=0.25, rho=0.1, constant_scale=1e-3)
    ref = _pi_general_reference(2, 1, 8, 0.25, 0.1, 64, 3, 3.0 * 1e-3)
    assert ref == pytest.approx(PI_EXAMPLE_SCALED, rel=1e-12)
    assert pi_general(p, 3, 64) == pytest.approx(PI_EXAMPLE_SCALED, rel=1e-12)


def test_pi_general_offline_constant():
    # the offline variant uses 200 in place of 3
    p = Params(d=2, k=1, delta=8, constant_scale=1e-5, lambdas=Lambdas(general=200.0))
    ref = _pi_general_reference(2, 1, 8, 0.25, 0.1, 64, 3, 200 * 1e-5)
    assert pi_general(p, 3, 64) == pytest.approx(ref, rel=1e-12)


def test_pi_general_huge_o_monotone():
    p = Params(d=2, k=1, delta=8)
    o = math.sqrt(2) * 8**3
    assert pi_general(p, 3, 2 * o) <= pi_general(p, 3, o)


def test_pi_general_no_overflow_for_large_exponents():
    p = Params(d=4, k=50, delta=2**20, constant_scale=1e-9)
    v = pi_general(p, p.L, 2**200)
    assert 0 < v <= 1


@given(st.integers(0, 4), st.integers(0, 40), st.floats(1e-8, 1.0))
def test_pi_monotone(i, j, scale):
    p = Params(d=2, k=2, delta=16, constant_scale=scale)
    o = 2**j
    assert pi_general(p, i, 2 * o) <= pi_general(p, i, o)
    assert pi_positive(p, i, 2 * o) <= pi_positive(p, i, o)
    if i > 0:
        assert pi_general(p, i - 1, o) >= pi_general(p, i, o)
        assert pi_positive(p, i - 1, o) >= pi_positive(p, i, o)


def test_pi_positive_root_and_clamp():
    p = Params(d=2, k=1, delta=8)
    assert pi_positive(p, -1, 10**30) == 1.0
    assert pi_positive(p, 0, 1) == 1.0
    with pytest.raises(ValueError):
        pi_positive(p, 4, 1)


def test_pi_positive_reference():
    p = Params(d=2, k=2, delta=16, constant_scale=1e-6)
    d, k, L, side, eps, rho, o, lv = 2, 2, 4, 16, 0.25, 0.1, 128, 2
    ref = 1e-6 * (3 * d * d * side * L * L / (2**lv * eps**2 * o) * math.log(2 * L * side ** (d * k) / rho)
                  + 3 * d * d * k * L**3 * side / (2**lv * eps**2 * rho * o) * math.log(30 * k * L * L / rho**2))
    assert pi_positive(p, lv, o) == pytest.approx(min(ref, 1.0), rel=1e-12)


def test_sample_bit_pi_one_always_one():
    h = SampleHash(3, 0, 0)
    keys = np.arange(1000, dtype=np.uint64)
    assert h.bits(keys, 1.0).all()
    assert sample_bit(h, 17, 1.0) == 1


def test_sample_bit_frequency():
    h = SampleHash(11, 2, 1)
    keys = np.arange(10**6, dtype=np.uint64)
    assert abs(h.bits(keys, 0.25).mean() - 0.25) <= 0.002


def test_sample_bit_deterministic():
    for p in [0, 5, 12345, 2**40 + 3]:
        assert sample_bit(SampleHash(1, 2, 3), p, 0.3) == sample_bit(SampleHash(1, 2, 3), p, 0.3)


def test_sample_hashes_differ_across_levels_and_guesses():
    keys = np.arange(20000, dtype=np.uint64)
    a = SampleHash(1, 0, 0).bits(keys, 0.5)
    b = SampleHash(1, 0, 1).bits(keys, 0.5)
    c = SampleHash(1, 1, 0).bits(keys, 0.5)
    assert 0.4 < (a == b).mean() < 0.6 and 0.4 < (a == c).mean() < 0.6


def test_threshold64():
    assert threshold64(1.0) is None
    assert threshold64(0.5) == 2**63


def test_keyed_hash_vectorised_matches_scalar():
    h = KeyedHash(99)
    keys = np.array([0, 1, 2**61], dtype=np.uint64)
    assert [int(x) for x in h(keys)] == [int(h(np.array([k], dtype=np.uint64))[0]) for k in keys]


def test_derive_seed_labels():
    assert derive_seed(1, "a") == derive_seed(1, "a")
    assert len({derive_seed(1, "a"), derive_seed(1, "b"), derive_seed(2, "a"), derive_seed(1, "a", 0)}) == 4
    assert 0 <= derive_seed(7, "x") < 2**64


def test_guess_ladder():
    lad = GuessLadder(2, 8)
    vals = lad.values
    assert vals[0] == 1
    assert all(b == 2 * a for a, b in zip(vals, vals[1:]))
    assert vals[-1] >= math.sqrt(2) * 8**3
    assert vals[-2] < math.sqrt(2) * 8**3


@given(st.integers(1, 3), st.integers(0, 6), st.data())
def test_point_keys_roundtrip(d, L, data):
    side = 2**L
    pts = np.array(data.draw(st.lists(st.lists(st.integers(1, side), min_size=d, max_size=d),
                                      min_size=1, max_size=20)), dtype=np.int64)
    keys = point_keys(pts, side)
    assert np.array_equal(points_from_keys(keys, d, side), pts)
    assert len(set(keys.tolist())) == len({tuple(p) for p in pts.tolist()})

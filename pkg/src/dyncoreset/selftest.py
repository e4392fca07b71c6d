"""Quick end-to-end checks runnable from the CLI."""

from __future__ import annotations

import numpy as np

from .coreset import exact_values, weights_from_values
from .eval import verify_coreset
from .grid import GridSystem
from .kset import KSet
from .model import Params
from .positive import PositiveStream
from .streams import generate


def _kset() -> bool:
    ks = KSet(64, 0.01, seed=1)
    keys = np.arange(1, 51, dtype=np.uint64) * 7919
    ks.update_many(keys, np.ones(50, np.int64))
    ks.update_many(keys[:10], -np.ones(10, np.int64))
    return ks.retrieve() == {int(x): 1 for x in keys[10:]}


def _telescope() -> bool:
    p = Params(d=2, k=2, delta=8, seed=3)
    P = generate("uniform", 20, 2, 8, 3).live_points()
    grid = GridSystem(p)
    cs = weights_from_values(grid, exact_values(grid, P), k=2)
    return verify_coreset(P, cs, 2, 1e-9, mode="exhaustive").passed


def _positive() -> bool:
    p = Params(d=2, k=1, delta=16, constant_scale=1e-5, seed=5)
    st = generate("clusters-with-deletions", 120, 2, 16, 5)
    s = PositiveStream(p)
    s.update_points(st.points, st.signs)
    cs = s.query()
    return cs.min_weight >= 0 and cs.total_weight == s.m


CHECKS = [("kset retrieval", _kset), ("telescope identity", _telescope), ("positive weights", _positive)]


def run(verbose: bool = False) -> bool:
    ok = True
    for name, fn in CHECKS:
        try:
            passed = bool(fn())
        except Exception as exc:  # report, keep going
            passed = False
            name = f"{name} ({type(exc).__name__}: {exc})"
        ok &= passed
        if verbose:
            print(f"{'PASS' if passed else 'FAIL'} {name}")
    return ok

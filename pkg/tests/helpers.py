"""Shared reference implementations and workload builders for the tests."""

from collections import Counter

import numpy as np


def zipf_turnstile(rng, n_keys=10**4, total=20000, s=1.1, delete_frac=0.3):
    """Zipf-distributed inserts over shuffled keys, then deletion of a random share of them.

    Returns (keys, signs, exact frequency vector indexed by key).
    """
    ranks = np.arange(1, n_keys + 1)
    p = ranks ** -s
    p /= p.sum()
    perm = rng.permutation(n_keys)
    ins = perm[rng.choice(n_keys, size=total, p=p)]
    dels = rng.choice(ins, size=int(delete_frac * total), replace=False)
    keys = np.concatenate([ins, dels]).astype(np.uint64)
    signs = np.concatenate([np.ones(len(ins), np.int64), -np.ones(len(dels), np.int64)])
    order = np.argsort(rng.random(len(keys)) + (signs < 0))  # deletes after their inserts on average
    freq = np.bincount(ins, minlength=n_keys) - np.bincount(dels, minlength=n_keys)
    return keys[order], signs[order], freq


def tail_f2(freq, k):
    f = np.sort(np.abs(np.asarray(freq, dtype=float)))[::-1]
    return float((f[int(k):] ** 2).sum())


def reference_multiset(keys, signs):
    ref = Counter()
    for k, s in zip(np.asarray(keys).tolist(), np.asarray(signs).tolist()):
        ref[k] += s
    return {k: v for k, v in ref.items() if v}

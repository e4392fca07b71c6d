"""Invertible turnstile sketch that returns its exact multiset or fails.

Each of r rows hashes a key to one of 2K buckets. A bucket accumulates the
count, the key sum (split into two 31-bit limbs) and a 64-bit fingerprint sum.
Retrieval repeatedly peels buckets that verifiably hold copies of a single key.
Storage is sparse: only touched buckets are kept, in sorted order, so memory
follows the number of updates rather than the capacity.
"""

from __future__ import annotations

import io
import json
import math

import numpy as np

from .hashing import KeyedHash, derive_seed

KEY_LIMIT = 1 << 62
_LIMB = 31
_LIMB_MASK = (1 << _LIMB) - 1


class KSetFailure(Exception):
    """Retrieval could not certify the stored multiset."""


def rows_for(capacity: int, delta: float) -> int:
    if capacity <= 1:
        return max(3, math.ceil(math.log2(1.0 / delta)))
    return max(3, math.ceil(math.log(capacity * capacity / delta) / math.log(2 * capacity)))


class KSet:
    def __init__(self, capacity: int, delta: float = 0.01, seed: int = 0, payload: bool = False):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        if not 0 < delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        self.capacity = int(capacity)
        self.delta = float(delta)
        self.seed = int(seed)
        self.payload = bool(payload)
        self.rows = rows_for(self.capacity, self.delta)
        self.width = 2 * self.capacity
        self._row_hash = KeyedHash(derive_seed(self.seed, "kset-rows"), rounds=2)
        self._fp_hash = KeyedHash(derive_seed(self.seed, "kset-fp"), rounds=2)
        self._pay_hash = KeyedHash(derive_seed(self.seed, "kset-payload-fp"), rounds=2)
        self._row_salt = np.array([derive_seed(self.seed, "row", r) for r in range(self.rows)], dtype=np.uint64)
        self._row_base = (np.arange(self.rows, dtype=np.int64) * self.width)[:, None]
        self.fields = ("count", "klo", "khi", "kfp") + (("plo", "phi", "pfp") if self.payload else ())
        self._idx = np.zeros(0, dtype=np.int64)
        self._vals = {f: np.zeros(0, dtype=self._dtype(f)) for f in self.fields}
        self._pending: list[tuple[np.ndarray, dict[str, np.ndarray]]] = []
        self._pending_size = 0

    @staticmethod
    def _dtype(f: str):
        return np.uint64 if f.endswith("fp") else np.int64

    # hashing

    def _buckets(self, keys: np.ndarray) -> np.ndarray:
        """Flat bucket positions (rows, n) for keys."""
        h = self._row_hash(keys[None, :] ^ self._row_salt[:, None])
        return (h % np.uint64(self.width)).astype(np.int64) + self._row_base

    def _fp(self, keys: np.ndarray) -> np.ndarray:
        return self._fp_hash(keys)

    # updates

    def update(self, key: int, op: int = 1, payload: int | None = None) -> None:
        pay = None if payload is None else np.array([payload], dtype=np.uint64)
        self.update_many(np.array([key], dtype=np.uint64), np.array([int(op)], dtype=np.int64), pay)

    def update_many(self, keys, signs, payloads=None) -> None:
        keys = np.asarray(keys, dtype=np.uint64)
        signs = np.broadcast_to(np.asarray(signs, dtype=np.int64), keys.shape)
        if keys.size == 0:
            return
        if keys.max() >= np.uint64(KEY_LIMIT):
            raise ValueError("keys must be below 2^62")
        if self.payload != (payloads is not None):
            raise ValueError("payload given to a sketch without payload lanes, or missing")
        contrib = {
            "count": signs,
            "klo": signs * (keys & np.uint64(_LIMB_MASK)).astype(np.int64),
            "khi": signs * (keys >> np.uint64(_LIMB)).astype(np.int64),
            "kfp": signs.astype(np.uint64) * self._fp(keys),
        }
        if self.payload:
            pay = np.asarray(payloads, dtype=np.uint64)
            if pay.size and pay.max() >= np.uint64(KEY_LIMIT):
                raise ValueError("payloads must be below 2^62")
            contrib["plo"] = signs * (pay & np.uint64(_LIMB_MASK)).astype(np.int64)
            contrib["phi"] = signs * (pay >> np.uint64(_LIMB)).astype(np.int64)
            contrib["pfp"] = signs.astype(np.uint64) * self._pay_hash(pay)
        pos = self._buckets(keys)
        flat_pos = pos.ravel()
        tiled = {f: np.tile(v, self.rows) for f, v in contrib.items()}
        self._pending.append((flat_pos, tiled))
        self._pending_size += flat_pos.size
        if self._pending_size > max(1 << 16, 2 * self._idx.size):
            self._consolidate()

    def _consolidate(self) -> None:
        if not self._pending:
            return
        idx = np.concatenate([self._idx] + [p for p, _ in self._pending])
        vals = {
            f: np.concatenate([self._vals[f]] + [v[f] for _, v in self._pending]) for f in self.fields
        }
        self._pending = []
        self._pending_size = 0
        order = np.argsort(idx, kind="stable")
        idx = idx[order]
        starts = np.flatnonzero(np.r_[True, idx[1:] != idx[:-1]]) if idx.size else np.zeros(0, np.int64)
        uidx = idx[starts]
        summed = {}
        with np.errstate(over="ignore"):
            for f in self.fields:
                summed[f] = np.add.reduceat(vals[f][order], starts) if idx.size else vals[f]
        keep = np.zeros(uidx.shape, dtype=bool)
        for f in self.fields:
            keep |= summed[f] != 0
        self._idx = uidx[keep]
        self._vals = {f: summed[f][keep].astype(self._dtype(f)) for f in self.fields}

    def merge(self, other: "KSet") -> None:
        """Bucket-wise addition of a sketch built with identical parameters."""
        if (other.capacity, other.delta, other.seed, other.payload) != (
            self.capacity, self.delta, self.seed, self.payload,
        ):
            raise ValueError("can only merge sketches with identical parameters")
        other._consolidate()
        self._pending.append((other._idx.copy(), {f: other._vals[f].copy() for f in self.fields}))
        self._pending_size += other._idx.size
        self._consolidate()

    # retrieval

    def retrieve(self) -> dict:
        """Exact multiset {key: count}, or {key: (count, payload_sum, payload_fp_sum)}.

        Raises KSetFailure when peeling stalls or leaves residue.
        """
        self._consolidate()
        idx = self._idx
        vals = {f: v.copy() for f, v in self._vals.items()}
        cnt, klo, khi, kfp = vals["count"], vals["klo"], vals["khi"], vals["kfp"]
        out: dict = {}
        while True:
            pos = np.flatnonzero(cnt > 0)
            if pos.size == 0:
                break
            c = cnt[pos]
            lo, hi = klo[pos], khi[pos]
            ok = (lo % c == 0) & (hi % c == 0)
            pos, c, lo, hi = pos[ok], c[ok], lo[ok] // c[ok], hi[ok] // c[ok]
            ok = (lo >= 0) & (lo <= _LIMB_MASK) & (hi >= 0) & (hi < (1 << _LIMB))
            pos, c, lo, hi = pos[ok], c[ok], lo[ok], hi[ok]
            keys = (hi.astype(np.uint64) << np.uint64(_LIMB)) | lo.astype(np.uint64)
            with np.errstate(over="ignore"):
                ok = kfp[pos] == c.astype(np.uint64) * self._fp(keys)
            pos, c, keys = pos[ok], c[ok], keys[ok]
            if pos.size:
                rows = idx[pos] // self.width
                home = self._buckets(keys)
                ok = home[rows, np.arange(keys.size)] == idx[pos]
                pos, c, keys = pos[ok], c[ok], keys[ok]
            if pos.size == 0:
                break
            keys, first = np.unique(keys, return_index=True)
            pos, c = pos[first], c[first]
            if self.payload:
                plo, phi, pfp = vals["plo"][pos], vals["phi"][pos], vals["pfp"][pos]
                for j in range(keys.size):
                    out[int(keys[j])] = (int(c[j]), (int(phi[j]) << _LIMB) + int(plo[j]), int(pfp[j]))
            else:
                for j in range(keys.size):
                    out[int(keys[j])] = int(c[j])
            # subtract each peeled bucket from all of its key's buckets
            wanted = self._buckets(keys).ravel()
            targets = np.minimum(np.searchsorted(idx, wanted), idx.size - 1)
            if np.any(idx[targets] != wanted):
                raise KSetFailure("peeled key points at an empty bucket")
            with np.errstate(over="ignore"):
                for f in self.fields:
                    np.subtract.at(vals[f], targets, np.tile(vals[f][pos], self.rows))
        for f in self.fields:
            if np.any(vals[f] != 0):
                raise KSetFailure(f"peeling stalled with {int(np.count_nonzero(cnt))} nonzero buckets")
        return out

    # state

    def state(self) -> dict[str, np.ndarray]:
        """Canonical sparse bucket state; equal states mean equal sketches."""
        self._consolidate()
        out = {"idx": self._idx.copy()}
        out.update({f: v.copy() for f, v in self._vals.items()})
        return out

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        self._pending, self._pending_size = [], 0
        self._idx = np.asarray(arrays["idx"]).astype(np.int64)
        self._vals = {f: np.asarray(arrays[f]).astype(self._dtype(f)) for f in self.fields}

    def is_empty(self) -> bool:
        self._consolidate()
        return self._idx.size == 0

    @property
    def nbytes(self) -> int:
        self._consolidate()
        return int(self._idx.nbytes + sum(v.nbytes for v in self._vals.values()))

    def to_bytes(self) -> bytes:
        meta = {
            "kind": "kset",
            "capacity": self.capacity,
            "delta": self.delta,
            "seed": self.seed,
            "payload": self.payload,
        }
        return _pack(meta, self.state())

    @classmethod
    def from_bytes(cls, blob: bytes) -> "KSet":
        meta, arrays = _unpack(blob)
        if meta.get("kind") != "kset":
            raise ValueError("not a KSet snapshot")
        s = cls(meta["capacity"], meta["delta"], meta["seed"], meta["payload"])
        s.load_state(arrays)
        return s


_MAGIC = b"DYNCSNAP1"


def _pack(meta: dict, arrays: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    header = json.dumps(meta, sort_keys=True).encode()
    return _MAGIC + len(header).to_bytes(4, "little") + header + buf.getvalue()


def _unpack(blob: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if not blob.startswith(_MAGIC):
        raise ValueError("bad snapshot framing")
    n = int.from_bytes(blob[len(_MAGIC):len(_MAGIC) + 4], "little")
    start = len(_MAGIC) + 4
    meta = json.loads(blob[start:start + n].decode())
    with np.load(io.BytesIO(blob[start + n:])) as data:
        arrays = {name: data[name] for name in data.files}
    return meta, arrays

"""Stream files and synthetic stream generators."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .hashing import derive_seed
from .model import Op, StreamUpdate

KINDS = ("gaussian-mixture", "uniform", "clusters-with-deletions")


class StreamParseError(ValueError):
    def __init__(self, lineno: int, msg: str):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {msg}")


@dataclass
class StreamFile:
    """A turnstile stream: signs (+1/-1) and integer points in [delta]^d."""

    d: int
    delta: int
    signs: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    points: np.ndarray | None = None

    def __post_init__(self):
        self.signs = np.asarray(self.signs, dtype=np.int64).reshape(-1)
        pts = np.zeros((0, self.d), np.int64) if self.points is None else self.points
        self.points = np.asarray(pts, dtype=np.int64).reshape(-1, self.d)
        if len(self.points) != len(self.signs):
            raise ValueError("signs and points differ in length")

    def __len__(self) -> int:
        return len(self.signs)

    def __eq__(self, other) -> bool:
        return (isinstance(other, StreamFile) and (self.d, self.delta) == (other.d, other.delta)
                and np.array_equal(self.signs, other.signs) and np.array_equal(self.points, other.points))

    def updates(self):
        for s, p in zip(self.signs.tolist(), self.points.tolist()):
            yield StreamUpdate(Op(s), tuple(p))

    def live_points(self) -> np.ndarray:
        """The surviving multiset, sorted lexicographically."""
        if len(self) == 0:
            return np.zeros((0, self.d), np.int64)
        uniq, inv = np.unique(self.points, axis=0, return_inverse=True)
        net = np.bincount(inv.reshape(-1), weights=self.signs, minlength=len(uniq)).astype(np.int64)
        if (net < 0).any():
            raise ValueError("stream deletes more copies than it inserts")
        return np.repeat(uniq, net, axis=0)

    def to_text(self) -> str:
        lines = [f"# stream d={self.d} delta={self.delta}"]
        for s, p in zip(self.signs.tolist(), self.points.tolist()):
            lines.append(("+ " if s > 0 else "- ") + " ".join(map(str, p)))
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def parse(cls, text: str) -> "StreamFile":
        lines = text.splitlines()
        head = lines[0].split() if lines else []
        if len(head) < 4 or head[:2] != ["#", "stream"]:
            raise StreamParseError(1, "expected '# stream d=<d> delta=<delta>'")
        try:
            hdr = dict(tok.split("=", 1) for tok in head[2:])
            d, delta = int(hdr["d"]), int(hdr["delta"])
        except (KeyError, ValueError):
            raise StreamParseError(1, "bad header fields") from None
        if d < 1 or delta < 1:
            raise StreamParseError(1, "d and delta must be positive")
        live: Counter = Counter()
        signs, points = [], []
        for lineno, ln in enumerate(lines[1:], start=2):
            parts = ln.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] not in "+-" or len(parts[0]) != 1:
                raise StreamParseError(lineno, f"unknown op {parts[0]!r}")
            if len(parts) != d + 1:
                raise StreamParseError(lineno, f"expected {d} coordinates")
            try:
                p = tuple(int(x) for x in parts[1:])
            except ValueError:
                raise StreamParseError(lineno, "coordinates must be integers") from None
            if any(x < 1 or x > delta for x in p):
                raise StreamParseError(lineno, f"point {p} outside [1, {delta}]^{d}")
            if parts[0] == "+":
                live[p] += 1
                signs.append(1)
            else:
                if live[p] == 0:
                    raise StreamParseError(lineno, f"delete of {p} which is not live")
                live[p] -= 1
                signs.append(-1)
            points.append(p)
        return cls(d, delta, np.array(signs, np.int64), np.array(points, np.int64).reshape(-1, d))

    @classmethod
    def read(cls, path) -> "StreamFile":
        with open(path) as fh:
            return cls.parse(fh.read())


def _fill_distinct(rng, draw, n: int, d: int, delta: int, max_rounds: int = 200) -> np.ndarray:
    """Draw until n distinct points; collisions are re-sampled, uniform fill as a last resort."""
    seen: dict[tuple, None] = {}
    for _ in range(max_rounds):
        if len(seen) >= n:
            break
        for p in map(tuple, draw(2 * (n - len(seen)) + 8).tolist()):
            if len(seen) < n:
                seen.setdefault(p, None)
    if len(seen) < n:
        flat = np.ravel_multi_index(tuple(np.array(list(seen), np.int64).reshape(-1, d).T - 1),
                                    (delta,) * d) if seen else np.zeros(0, np.int64)
        free = np.setdiff1d(np.arange(delta**d), flat)
        extra = rng.choice(free, n - len(seen), replace=False)
        for p in np.stack(np.unravel_index(extra, (delta,) * d), axis=1) + 1:
            seen[tuple(int(x) for x in p)] = None
    return np.array(list(seen), dtype=np.int64).reshape(-1, d)


def gaussian_mixture(n: int, d: int, delta: int, seed: int = 0, components: int = 4) -> np.ndarray:
    rng = np.random.default_rng(derive_seed(seed, "gen", "gaussian-mixture"))
    means = rng.uniform(0.2 * delta, 0.8 * delta, size=(components, d))
    scales = rng.uniform(delta / 20, delta / 8, size=(components, d))
    mix = rng.dirichlet(np.full(components, 2.0))

    def draw(m):
        comp = rng.choice(components, size=m, p=mix)
        x = rng.normal(means[comp], scales[comp])
        return np.clip(np.rint(x), 1, delta).astype(np.int64)

    return _fill_distinct(rng, draw, n, d, delta)


def uniform(n: int, d: int, delta: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(derive_seed(seed, "gen", "uniform"))
    flat = rng.choice(delta**d, size=n, replace=False)
    return np.stack(np.unravel_index(flat, (delta,) * d), axis=1).astype(np.int64) + 1


def clusters_with_deletions(n: int, d: int, delta: int, seed: int = 0):
    """n distinct clustered inserts, with n // 2 of them deleted at random later positions."""
    rng = np.random.default_rng(derive_seed(seed, "gen", "clusters-with-deletions"))
    pts = gaussian_mixture(n, d, delta, derive_seed(seed, "gen", "clusters"), components=3)
    victims = rng.choice(n, size=n // 2, replace=False)
    events = [(float(j), 1, j) for j in range(n)]
    for j in victims.tolist():
        events.append((rng.uniform(j, n), -1, j))
    events.sort(key=lambda e: (e[0], -e[1]))
    signs = np.array([e[1] for e in events], np.int64)
    points = pts[[e[2] for e in events]] if events else np.zeros((0, d), np.int64)
    return signs, points


def generate(kind: str, n: int, d: int, delta: int, seed: int = 0) -> StreamFile:
    if n < 0 or d < 1 or delta < 1:
        raise ValueError("invalid generator parameters")
    if n > delta**d:
        raise ValueError(f"cannot place {n} distinct points in [{delta}]^{d}")
    if kind == "clusters-with-deletions":
        signs, points = clusters_with_deletions(n, d, delta, seed)
        return StreamFile(d, delta, signs, points)
    if kind == "gaussian-mixture":
        pts = gaussian_mixture(n, d, delta, seed)
    elif kind == "uniform":
        pts = uniform(n, d, delta, seed)
    else:
        raise ValueError(f"unknown stream kind {kind!r}")
    return StreamFile(d, delta, np.ones(len(pts), np.int64), pts)

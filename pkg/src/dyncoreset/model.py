"""Value types and the parameter bundle shared by the rest of the package."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from enum import IntEnum
from typing import Iterable, Sequence

Point = tuple[int, ...]

E = math.e


class Op(IntEnum):
    INSERT = 1
    DELETE = -1

    @property
    def symbol(self) -> str:
        return "+" if self is Op.INSERT else "-"


@dataclass(frozen=True)
class StreamUpdate:
    op: Op
    point: Point


@dataclass(frozen=True)
class WeightedPoint:
    point: tuple[float, ...]
    weight: float
    level: int = 0
    provenance: str = "point"


def derive_levels(delta: int) -> tuple[int, int]:
    """Pad the side length up to a power of two and return (padded, levels)."""
    if delta < 1:
        raise ValueError("delta must be >= 1")
    levels = (delta - 1).bit_length()
    return 1 << levels, levels


@dataclass(frozen=True)
class Lambdas:
    # heavy cells per level cap, and head size of the positive-mode sketches
    l1: float = 10.0
    # ending-level cost bound used by statistical checks
    l2: float = 40.0
    # sampling constants of the positive construction
    l3: float = 3.0
    l4: float = 3.0
    l5: float = 8.0
    l6: float = 8.0
    # heavy hitter accuracy divisor
    l7: float = 8.0 * (2.0 + E) ** 2
    # top-set multiplier of heavy cell identification
    l8: float = E + 4.0
    l9: float = 8.0
    # sampling constant of the general construction
    general: float = 3.0
    # leading constants for the sparse recovery capacity and threshold
    alpha: float = 1.0
    beta: float = 1.0

    def with_overrides(self, overrides: dict[str, float]) -> "Lambdas":
        names = {f.name for f in fields(self)}
        unknown = set(overrides) - names
        if unknown:
            raise ValueError(f"unknown lambda constants: {sorted(unknown)}")
        for name, value in overrides.items():
            if not value > 0:
                raise ValueError(f"lambda {name} must be positive")
        return replace(self, **{k: float(v) for k, v in overrides.items()})


@dataclass(frozen=True)
class Params:
    d: int
    k: int
    delta: int
    eps: float = 0.25
    rho: float = 0.1
    fail_prob: float = 0.1
    lambdas: Lambdas = field(default_factory=Lambdas)
    constant_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("d", "k", "delta"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")
        for name in ("eps", "rho", "fail_prob"):
            value = getattr(self, name)
            if not 0.0 < value < 0.5:
                raise ValueError(f"{name} must lie in (0, 1/2), got {value}")
        if not self.constant_scale > 0:
            raise ValueError("constant_scale must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def side(self) -> int:
        """Padded side length, a power of two."""
        return derive_levels(self.delta)[0]

    @property
    def L(self) -> int:
        return derive_levels(self.delta)[1]

    def with_(self, **changes) -> "Params":
        return replace(self, **changes)


def check_point(p: Sequence[int], d: int, delta: int) -> Point:
    if len(p) != d:
        raise ValueError(f"point {tuple(p)} does not have dimension {d}")
    out = tuple(int(x) for x in p)
    for x in out:
        if not 1 <= x <= delta:
            raise ValueError(f"coordinate {x} outside [1, {delta}]")
    return out


def check_centers(Z: Iterable[Sequence[int]], k: int, d: int, delta: int) -> tuple[Point, ...]:
    centers = tuple(check_point(z, d, delta) for z in Z)
    if not 1 <= len(centers) <= k:
        raise ValueError(f"need between 1 and {k} centers, got {len(centers)}")
    return centers


def distance(p: Sequence[float], q: Sequence[float]) -> float:
    if len(p) != len(q):
        raise ValueError("dimension mismatch")
    return math.dist(p, q)


def distance_to_set(p: Sequence[float], Z: Iterable[Sequence[float]]) -> float:
    best = math.inf
    for z in Z:
        best = min(best, distance(p, z))
    if best == math.inf:
        raise ValueError("empty center set")
    return best

"""D-adic cubes inside a finite working box."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np


class ScaleError(ValueError):
    """A cube operation left the configured scale window."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned half-open box prod [lo_i, hi_i)."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    @property
    def ds(self) -> int:
        return len(self.lo)

    @property
    def widths(self) -> np.ndarray:
        return np.asarray(self.hi, float) - np.asarray(self.lo, float)

    @property
    def volume(self) -> float:
        return float(np.prod(self.widths))

    def contains_points(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        return np.all((pts >= lo) & (pts < hi), axis=1)

    def contains_box(self, other: "Box") -> bool:
        return all(a <= b for a, b in zip(self.lo, other.lo)) and all(
            a >= b for a, b in zip(self.hi, other.hi)
        )

    def intersects(self, other: "Box") -> bool:
        return all(max(a, c) < min(b, d) for a, b, c, d in zip(self.lo, self.hi, other.lo, other.hi))

    def clip(self, other: "Box") -> "Box":
        lo = tuple(max(a, c) for a, c in zip(self.lo, other.lo))
        hi = tuple(max(l, min(b, d)) for l, b, d in zip(lo, self.hi, other.hi))
        return Box(lo, hi)


@dataclass(frozen=True, order=True)
class GridCube:
    """The cube prod [D^s a_i, D^s (a_i + 1))."""

    s: int
    corner: tuple[int, ...]
    D: int

    @property
    def ds(self) -> int:
        return len(self.corner)

    @property
    def side(self) -> float:
        return float(self.D) ** self.s

    @property
    def volume(self) -> float:
        return self.side**self.ds

    @cached_property
    def box(self) -> Box:
        ell = self.side
        return Box(tuple(a * ell for a in self.corner), tuple((a + 1) * ell for a in self.corner))

    @property
    def center(self) -> np.ndarray:
        return (np.asarray(self.corner, float) + 0.5) * self.side

    def contains(self, other: "GridCube") -> bool:
        if other.s > self.s:
            return False
        k = self.D ** (self.s - other.s)
        return all(o // k == a for o, a in zip(other.corner, self.corner))

    def contains_points(self, pts: np.ndarray) -> np.ndarray:
        return self.box.contains_points(pts)

    def children(self) -> list["GridCube"]:
        base = [a * self.D for a in self.corner]
        return [
            GridCube(self.s - 1, tuple(b + o for b, o in zip(base, off)), self.D)
            for off in itertools.product(range(self.D), repeat=self.ds)
        ]

    def parent(self) -> "GridCube":
        return GridCube(self.s + 1, tuple(a // self.D for a in self.corner), self.D)

    def ancestor(self, s: int) -> "GridCube":
        if s < self.s:
            raise ScaleError(f"ancestor scale {s} below cube scale {self.s}")
        k = self.D ** (s - self.s)
        return GridCube(s, tuple(a // k for a in self.corner), self.D)

    def dilate(self, a: float) -> Box:
        """Concentric cube with side a * side (not clipped)."""
        c = self.center
        h = 0.5 * a * self.side
        return Box(tuple(c - h), tuple(c + h))


@dataclass(frozen=True)
class WorkingBox:
    """The window [0, D^s_max)^ds with scales s_min..s_max."""

    D: int
    ds: int
    s_min: int
    s_max: int

    def __post_init__(self):
        if self.D < 2:
            raise ValueError("D must be at least 2")
        if self.s_min > self.s_max:
            raise ValueError("s_min must not exceed s_max")

    @property
    def scales(self) -> range:
        return range(self.s_min, self.s_max + 1)

    @property
    def box(self) -> Box:
        L = float(self.D) ** self.s_max
        return Box((0.0,) * self.ds, (L,) * self.ds)

    @property
    def top(self) -> GridCube:
        return GridCube(self.s_max, (0,) * self.ds, self.D)

    def n_side(self, s: int) -> int:
        self.check_scale(s)
        return self.D ** (self.s_max - s)

    def check_scale(self, s: int) -> None:
        if not self.s_min <= s <= self.s_max:
            raise ScaleError(f"scale {s} outside [{self.s_min}, {self.s_max}]")

    def cube(self, s: int, corner) -> GridCube:
        self.check_scale(s)
        corner = tuple(int(c) for c in corner)
        n = self.n_side(s)
        if any(c < 0 or c >= n for c in corner):
            raise ScaleError(f"corner {corner} outside the box at scale {s}")
        return GridCube(s, corner, self.D)

    def cubes_at(self, s: int) -> list[GridCube]:
        n = self.n_side(s)
        return [GridCube(s, c, self.D) for c in itertools.product(range(n), repeat=self.ds)]

    def all_cubes(self) -> list[GridCube]:
        out = []
        for s in reversed(self.scales):
            out.extend(self.cubes_at(s))
        return out

    def flat_index(self, cube: GridCube) -> int:
        n = self.n_side(cube.s)
        return int(np.ravel_multi_index(cube.corner, (n,) * self.ds))

    def contains_cube(self, cube: GridCube) -> bool:
        if not self.s_min <= cube.s <= self.s_max:
            return False
        n = self.n_side(cube.s)
        return all(0 <= c < n for c in cube.corner)

    def children(self, cube: GridCube) -> list[GridCube]:
        if cube.s - 1 < self.s_min:
            raise ScaleError("children below s_min")
        return cube.children()

    def parent(self, cube: GridCube) -> GridCube:
        if cube.s + 1 > self.s_max:
            raise ScaleError("parent above s_max")
        return cube.parent()

    def cubes_intersecting(self, region: Box, s: int) -> list[GridCube]:
        """All scale-s cubes of the box that meet the (half-open) region."""
        n = self.n_side(s)
        ell = float(self.D) ** s
        ranges = []
        for lo, hi in zip(region.lo, region.hi):
            if hi <= lo:
                # degenerate region: a point (or empty); treat lo as a point
                a = int(np.floor(lo / ell))
                ranges.append(range(max(a, 0), min(a + 1, n)))
                continue
            a = int(np.floor(lo / ell))
            b = int(np.ceil(hi / ell))
            ranges.append(range(max(a, 0), min(b, n)))
        return [GridCube(s, c, self.D) for c in itertools.product(*ranges)]

    def cubes_inside(self, region: Box, s: int) -> list[GridCube]:
        """Scale-s cubes of the box contained in the region."""
        return [c for c in self.cubes_intersecting(region, s) if region.contains_box(c.box)]

    def clipped_volume(self, region: Box) -> float:
        return region.clip(self.box).volume

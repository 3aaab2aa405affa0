"""Geometry of Z^2: points, nearest-neighbour paths, finite regions and boundaries."""
from __future__ import annotations

import math
from fractions import Fraction
from typing import Iterable, Iterator, NamedTuple

import numpy as np

COORD_LIMIT = 2**30

# E, N, W, S -- fixed so seeded runs are reproducible.
STEPS = np.array([[1, 0], [0, 1], [-1, 0], [0, -1]], dtype=np.int64)


class LatticePoint(NamedTuple):
    x: int
    y: int

    def norm2(self) -> int:
        return self.x * self.x + self.y * self.y


def as_point(p) -> LatticePoint:
    x, y = int(p[0]), int(p[1])
    if abs(x) > COORD_LIMIT or abs(y) > COORD_LIMIT:
        raise ValueError(f"coordinate out of safe range |x|,|y| <= 2^30: {(x, y)}")
    return LatticePoint(x, y)


def neighbors(p) -> list[LatticePoint]:
    """The four nearest neighbours of ``p`` in the order E, N, W, S."""
    x, y = as_point(p)
    return [LatticePoint(x + 1, y), LatticePoint(x, y + 1),
            LatticePoint(x - 1, y), LatticePoint(x, y - 1)]


class LatticePath:
    """A non-empty sequence of lattice points.

    Consecutive vertices must be nearest neighbours unless ``tree_path`` is set,
    in which case adjacency is relative to some tree and is not checked here.
    """

    __slots__ = ("_v", "tree_path")

    def __init__(self, vertices, tree_path: bool = False, check: bool = True):
        v = np.asarray(vertices, dtype=np.int64)
        if v.ndim == 1 and v.size == 2:
            v = v.reshape(1, 2)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] == 0:
            raise ValueError("a path needs at least one (x, y) vertex")
        if check and not tree_path and len(v) > 1:
            steps = np.abs(np.diff(v, axis=0)).sum(axis=1)
            if not np.all(steps == 1):
                i = int(np.argmax(steps != 1))
                raise ValueError(f"vertices {i} and {i + 1} are not nearest neighbours")
        v.setflags(write=False)
        self._v = v
        self.tree_path = tree_path

    @property
    def array(self) -> np.ndarray:
        return self._v

    @property
    def points(self) -> list[LatticePoint]:
        return [LatticePoint(int(x), int(y)) for x, y in self._v]

    @property
    def steps(self) -> int:
        return len(self._v) - 1

    def __len__(self) -> int:
        return len(self._v)

    def __iter__(self) -> Iterator[LatticePoint]:
        return iter(self.points)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return LatticePath(self._v[i], tree_path=self.tree_path, check=False)
        x, y = self._v[i]
        return LatticePoint(int(x), int(y))

    def __eq__(self, other) -> bool:
        if not isinstance(other, LatticePath):
            return NotImplemented
        return self._v.shape == other._v.shape and bool(np.all(self._v == other._v))

    def __hash__(self):
        return hash(self._v.tobytes())

    def __repr__(self) -> str:
        pts = self.points
        body = ", ".join(f"({x},{y})" for x, y in pts[:6])
        if len(pts) > 6:
            body += f", ... ({len(pts)} vertices)"
        return f"LatticePath([{body}])"

    def is_self_avoiding(self) -> bool:
        return len({(int(x), int(y)) for x, y in self._v}) == len(self._v)

    def key(self) -> tuple:
        """Hashable canonical form, handy for histograms."""
        return tuple(map(tuple, self._v.tolist()))


class LatticeRegion:
    """A finite set of lattice points with a pure membership test."""

    def __contains__(self, p) -> bool:
        raise NotImplementedError

    def bounds(self) -> tuple[int, int, int, int]:
        """Inclusive bounding box (xmin, xmax, ymin, ymax)."""
        raise NotImplementedError

    def points(self) -> list[LatticePoint]:
        xmin, xmax, ymin, ymax = self.bounds()
        return [LatticePoint(x, y)
                for y in range(ymin, ymax + 1)
                for x in range(xmin, xmax + 1)
                if (x, y) in self]

    def materialize(self) -> "PointSet":
        return PointSet(self.points())

    def __len__(self) -> int:
        return len(self.points())

    def __iter__(self):
        return iter(self.points())


class PointSet(LatticeRegion):
    def __init__(self, pts: Iterable = ()):
        self._pts = frozenset(as_point(p) for p in pts)

    def __contains__(self, p) -> bool:
        return (int(p[0]), int(p[1])) in self._pts

    def bounds(self):
        if not self._pts:
            return (0, -1, 0, -1)
        xs = [p.x for p in self._pts]
        ys = [p.y for p in self._pts]
        return (min(xs), max(xs), min(ys), max(ys))

    def points(self):
        return sorted(self._pts, key=lambda p: (p.y, p.x))

    def __len__(self):
        return len(self._pts)

    def __eq__(self, other):
        if isinstance(other, LatticeRegion):
            return set(self.points()) == set(other.points())
        return NotImplemented

    __hash__ = None


class Box(LatticeRegion):
    """The square [cx-h, cx+h] x [cy-h, cy+h]."""

    def __init__(self, half_width: int, center=(0, 0)):
        if half_width < 0:
            raise ValueError("half width must be nonnegative")
        self.h = int(half_width)
        self.center = as_point(center)

    def __contains__(self, p) -> bool:
        return (abs(int(p[0]) - self.center.x) <= self.h
                and abs(int(p[1]) - self.center.y) <= self.h)

    def bounds(self):
        c, h = self.center, self.h
        return (c.x - h, c.x + h, c.y - h, c.y + h)

    def __len__(self):
        return (2 * self.h + 1) ** 2


class Ball(LatticeRegion):
    """Euclidean ball {y : |y - center| <= r}, membership decided exactly."""

    def __init__(self, center, r):
        if r < 0:
            raise ValueError("radius must be nonnegative")
        self.center = as_point(center)
        self.r = r
        self._r2 = math.floor(Fraction(r) ** 2)

    def __contains__(self, p) -> bool:
        dx = int(p[0]) - self.center.x
        dy = int(p[1]) - self.center.y
        return dx * dx + dy * dy <= self._r2

    def bounds(self):
        k = math.isqrt(self._r2)
        c = self.center
        return (c.x - k, c.x + k, c.y - k, c.y + k)


def euclidean_ball(center, r) -> Ball:
    return Ball(center, r)


def outer_boundary(region: LatticeRegion) -> PointSet:
    """Points outside ``region`` with a nearest neighbour inside it."""
    out = set()
    for p in region.points():
        for q in neighbors(p):
            if q not in region:
                out.add(q)
    return PointSet(out)


def inner_boundary(region: LatticeRegion) -> PointSet:
    """Points of ``region`` with a nearest neighbour outside it."""
    return PointSet(p for p in region.points()
                    if any(q not in region for q in neighbors(p)))


def format_point(p) -> str:
    return f"{int(p[0])} {int(p[1])}"


def parse_point(line: str) -> LatticePoint:
    x, y = line.split()
    return as_point((int(x), int(y)))


def dump_path(path: LatticePath) -> str:
    return "".join(format_point(p) + "\n" for p in path.array)


def load_path(text: str, tree_path: bool = False) -> LatticePath:
    pts = [parse_point(line) for line in text.splitlines() if line.strip()]
    return LatticePath(pts, tree_path=tree_path)

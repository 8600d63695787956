"""Geometry of Z^d: points, edges, boxes, paths, teleporters and restriction.

Points are plain tuples of ints. The neighbour order ``+e1, -e1, +e2, -e2, ...``
is used everywhere a fixed order is needed (transition vectors, step indices,
the binary trajectory format).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence, Tuple

Point = Tuple[int, ...]


def as_point(coords: Iterable[int]) -> Point:
    return tuple(int(c) for c in coords)


def neighbor_offset(d: int, i: int) -> Point:
    """Offset of neighbour ``i`` in the fixed order."""
    if not 0 <= i < 2 * d:
        raise ValueError(f"neighbor index {i} out of range for d={d}")
    off = [0] * d
    off[i // 2] = 1 if i % 2 == 0 else -1
    return tuple(off)


def neighbors(u: Sequence[int]) -> list[Point]:
    """``[u+e1, u-e1, u+e2, u-e2, ..., u+ed, u-ed]``."""
    u = as_point(u)
    out = []
    for k in range(len(u)):
        for s in (1, -1):
            v = list(u)
            v[k] += s
            out.append(tuple(v))
    return out


def neighbor_index(u: Sequence[int], v: Sequence[int]) -> int:
    """Index of ``v`` in ``neighbors(u)``; raises if they are not adjacent."""
    diff = [b - a for a, b in zip(u, v)]
    if len(u) != len(v) or sum(abs(x) for x in diff) != 1:
        raise ValueError(f"{tuple(u)} and {tuple(v)} are not lattice neighbors")
    k = next(i for i, x in enumerate(diff) if x != 0)
    return 2 * k + (0 if diff[k] == 1 else 1)


def l1(u: Sequence[int], v: Sequence[int]) -> int:
    return sum(abs(a - b) for a, b in zip(u, v))


def linf(u: Sequence[int], v: Sequence[int]) -> int:
    return max((abs(a - b) for a, b in zip(u, v)), default=0)


def adjacent(u: Sequence[int], v: Sequence[int]) -> bool:
    return len(u) == len(v) and l1(u, v) == 1


@dataclass(frozen=True, order=True)
class Edge:
    """Nearest-neighbour edge stored with the lexicographically smaller end first."""

    lo: Point
    hi: Point

    def __post_init__(self):
        lo, hi = as_point(self.lo), as_point(self.hi)
        if not adjacent(lo, hi):
            raise ValueError(f"{lo} and {hi} are not lattice neighbors")
        if hi < lo:
            lo, hi = hi, lo
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def axis(self) -> int:
        return next(k for k in range(len(self.lo)) if self.lo[k] != self.hi[k])

    def other(self, u: Point) -> Point:
        if u == self.lo:
            return self.hi
        if u == self.hi:
            return self.lo
        raise ValueError(f"{u} is not an endpoint of {self}")

    def to_json(self) -> list:
        return [list(self.lo), list(self.hi)]

    @classmethod
    def from_json(cls, obj) -> "Edge":
        return cls(as_point(obj[0]), as_point(obj[1]))


@dataclass(frozen=True)
class Box:
    """``center + [-radius, radius]^d``."""

    center: Point
    radius: int

    def __post_init__(self):
        object.__setattr__(self, "center", as_point(self.center))
        if int(self.radius) != self.radius or self.radius < 0:
            raise ValueError("box radius must be a nonnegative integer")
        object.__setattr__(self, "radius", int(self.radius))

    @property
    def d(self) -> int:
        return len(self.center)

    def __contains__(self, u) -> bool:
        return len(u) == self.d and linf(u, self.center) <= self.radius

    def __iter__(self) -> Iterator[Point]:
        ranges = [range(c - self.radius, c + self.radius + 1) for c in self.center]
        return iter(itertools.product(*ranges))

    def __len__(self) -> int:
        return (2 * self.radius + 1) ** self.d

    def contains_box(self, other: "Box") -> bool:
        return linf(self.center, other.center) + other.radius <= self.radius

    def strictly_contains(self, other: "Box") -> bool:
        return self.contains_box(other) and self != other

    def to_json(self) -> dict:
        return {"center": list(self.center), "radius": self.radius}

    @classmethod
    def from_json(cls, obj) -> "Box":
        return cls(as_point(obj["center"]), int(obj["radius"]))


def boundary_edges(box: Box) -> set[Edge]:
    """Edges with exactly one endpoint in ``box``."""
    out = set()
    for u in box:
        for v in neighbors(u):
            if v not in box:
                out.add(Edge(u, v))
    return out


def in_closure(box: Box, u: Sequence[int]) -> bool:
    """Membership in ``closure(box)`` without enumerating it."""
    if len(u) != box.d:
        return False
    gaps = [abs(a - c) - box.radius for a, c in zip(u, box.center)]
    excess = [g for g in gaps if g > 0]
    return not excess or excess == [1]


def closure(box: Box) -> set[Point]:
    """``box`` together with every vertex having a neighbour in it."""
    pts = set(box)
    for u in list(pts):
        pts.update(neighbors(u))
    return pts


@dataclass(frozen=True)
class PathSeq:
    """Vertex sequence; a strict path when ``box`` is None, else a teleporter
    relative to ``box``."""

    vertices: Tuple[Point, ...]
    box: Optional[Box] = None
    _checked: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "vertices", tuple(as_point(v) for v in self.vertices))
        if not self._checked:
            self.validate()

    @property
    def is_teleporter(self) -> bool:
        return self.box is not None

    def __len__(self) -> int:
        return len(self.vertices)

    def __getitem__(self, i):
        return self.vertices[i]

    @property
    def length(self) -> int:
        """Number of steps (``len(vertices) - 1``); -1 for the empty sequence."""
        return len(self.vertices) - 1

    def validate(self) -> None:
        vs = self.vertices
        if vs:
            d = len(vs[0])
            if any(len(v) != d for v in vs):
                raise ValueError("mixed dimensions in path")
        if self.box is None:
            for i in range(len(vs) - 1):
                if not adjacent(vs[i], vs[i + 1]):
                    raise ValueError(f"step {i} -> {i + 1} is not a lattice step")
            return
        box = self.box
        out = [v not in box for v in vs]
        for i, v in enumerate(vs):
            if not in_closure(box, v):
                raise ValueError(f"vertex {v} at index {i} is outside the closure of the box")
        for i in range(len(vs) - 1):
            if not adjacent(vs[i], vs[i + 1]) and not (out[i] and out[i + 1]):
                raise ValueError(f"illegal jump at index {i}")
        for i in range(len(vs) - 2):
            if out[i] and out[i + 1] and out[i + 2]:
                raise ValueError(f"three consecutive outside vertices at index {i}")

    def to_json(self) -> dict:
        obj = {"vertices": [list(v) for v in self.vertices]}
        if self.box is not None:
            obj["box"] = self.box.to_json()
        return obj

    @classmethod
    def from_json(cls, obj) -> "PathSeq":
        box = Box.from_json(obj["box"]) if obj.get("box") is not None else None
        return cls(tuple(as_point(v) for v in obj["vertices"]), box)


def restriction_times(vertices: Sequence[Point], box: Box) -> list[int]:
    """Indices ``t_0 < t_1 < ...`` kept when restricting to ``box``.

    ``t_0`` is 0 when the path starts in the box, else the first ``t`` whose
    successor lies in the box. From an inside index the next one is ``t+1``;
    from an outside index it is the first later ``t`` that lies in the box or
    whose successor does.
    """
    n = len(vertices) - 1
    inside = [v in box for v in vertices]
    if n < 0:
        return []
    if inside[0]:
        t = 0
    else:
        t = next((s for s in range(n) if inside[s + 1]), None)
        if t is None:
            return []
    times = [t]
    while True:
        if inside[t]:
            nxt = t + 1 if t + 1 <= n else None
        else:
            nxt = next((s for s in range(t + 1, n + 1)
                        if inside[s] or (s + 1 <= n and inside[s + 1])), None)
        if nxt is None:
            return times
        times.append(nxt)
        t = nxt


def restrict(path: PathSeq, box: Box) -> PathSeq:
    """Teleporter obtained from ``path`` by keeping its ``box``-relevant steps.

    ``path`` must be a strict path or a teleporter relative to a box strictly
    containing ``box``. A path that never enters ``box`` restricts to the
    empty sequence.
    """
    if path.box is not None and not path.box.strictly_contains(box):
        raise ValueError("can only restrict a teleporter to a strictly smaller box")
    if path.vertices and len(path.vertices[0]) != box.d:
        raise ValueError("path and box dimensions differ")
    times = restriction_times(path.vertices, box)
    return PathSeq(tuple(path.vertices[t] for t in times), box)

"""ORRW dynamics: parameters, environments, uniform sources, simulation,
natural coupling and concatenation."""
from __future__ import annotations

import json
import math
import struct
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from . import _kernels as K
from . import _prf
from ._backend import kernel_errstate
from .lattice import Box, Edge, PathSeq, Point, as_point, neighbor_index, neighbor_offset, neighbors


@dataclass(frozen=True)
class ModelParams:
    """Dimension ``d``, reinforcement ``a`` and the exponents kappa, nu, eps, delta.

    ``eps`` and ``delta`` default to ``1/(1e4 d)`` and ``1/(1e5 d^2)``.
    """

    d: int
    a: float
    kappa: float = 3.5
    nu: float = 0.01
    eps: Optional[float] = None
    delta: Optional[float] = None

    def __post_init__(self):
        if int(self.d) != self.d or not 1 <= self.d <= 31:
            raise ValueError("d must be an integer in [1, 31]")
        object.__setattr__(self, "d", int(self.d))
        a = float(self.a)
        if not math.isfinite(a) or a < 0:
            raise ValueError("reinforcement a must be a finite nonnegative real")
        object.__setattr__(self, "a", a)
        if self.eps is None:
            object.__setattr__(self, "eps", 1.0 / (1e4 * self.d))
        if self.delta is None:
            object.__setattr__(self, "delta", 1.0 / (1e5 * self.d ** 2))
        for name in ("kappa", "nu", "eps", "delta"):
            v = float(getattr(self, name))
            if not v > 0:
                raise ValueError(f"{name} must be positive")
            object.__setattr__(self, name, v)

    def to_json(self) -> dict:
        return {"d": self.d, "a": self.a, "kappa": self.kappa, "nu": self.nu,
                "eps": self.eps, "delta": self.delta}

    @classmethod
    def from_json(cls, obj) -> "ModelParams":
        return cls(**obj)


class EdgeEnvironment:
    """Set of reinforced edges."""

    def __init__(self, edges: Iterable[Edge] = ()):
        self._edges = set(edges)

    def add(self, e: Edge) -> bool:
        """Insert ``e``; returns True when it was not already reinforced."""
        if e in self._edges:
            return False
        self._edges.add(e)
        return True

    def __contains__(self, e) -> bool:
        return e in self._edges

    def __iter__(self):
        return iter(self._edges)

    def __len__(self) -> int:
        return len(self._edges)

    def __eq__(self, other) -> bool:
        return isinstance(other, EdgeEnvironment) and self._edges == other._edges

    def __repr__(self) -> str:
        return f"EdgeEnvironment({sorted(self._edges)!r})"

    def copy(self) -> "EdgeEnvironment":
        return EdgeEnvironment(self._edges)

    def union(self, other: "EdgeEnvironment") -> "EdgeEnvironment":
        return EdgeEnvironment(self._edges | other._edges)

    def translate(self, shift: Sequence[int]) -> "EdgeEnvironment":
        sh = as_point(shift)
        return EdgeEnvironment(
            Edge(tuple(a + b for a, b in zip(e.lo, sh)), tuple(a + b for a, b in zip(e.hi, sh)))
            for e in self._edges)

    def mask(self, u: Point) -> int:
        """Bit ``i`` set when the edge to ``neighbors(u)[i]`` is reinforced."""
        m = 0
        for i, v in enumerate(neighbors(u)):
            if Edge(u, v) in self._edges:
                m |= 1 << i
        return m

    def as_arrays(self, d: int) -> tuple[np.ndarray, np.ndarray]:
        """``(lo, axis)`` arrays in the layout the kernels expect."""
        edges = sorted(self._edges)
        lo = np.array([e.lo for e in edges], dtype=np.int64).reshape(len(edges), d)
        axis = np.array([e.axis for e in edges], dtype=np.int64)
        return lo, axis

    def to_json(self) -> list:
        return [e.to_json() for e in sorted(self._edges)]

    @classmethod
    def from_json(cls, obj) -> "EdgeEnvironment":
        return cls(Edge.from_json(e) for e in obj)


@dataclass(frozen=True)
class TimeStream:
    """``U_1, U_2, ...`` keyed by ``seed``; a walk started with ``offset`` reads
    ``U_{offset+1}`` on its first step."""

    seed: int
    offset: int = 0

    def __post_init__(self):
        if self.offset < 0:
            raise ValueError("offset must be nonnegative")

    @property
    def key(self) -> np.uint64:
        with kernel_errstate():
            return np.uint64(_prf.domain_key(_prf.as_seed(self.seed), _prf.DOMAIN_TIME))

    def at(self, t: int) -> float:
        with kernel_errstate():
            return float(_prf.stream_at(self.key, np.int64(t)))

    def to_json(self) -> dict:
        return {"kind": "time", "seed": int(self.seed), "offset": int(self.offset)}


@dataclass(frozen=True)
class Envelopes:
    """Per-vertex stacks ``U_{v,1}, U_{v,2}, ...`` keyed by ``seed``."""

    seed: int

    @property
    def key(self) -> np.uint64:
        with kernel_errstate():
            return np.uint64(_prf.domain_key(_prf.as_seed(self.seed), _prf.DOMAIN_ENV))

    def at(self, v: Sequence[int], n: int) -> float:
        if n < 1:
            raise ValueError("envelope index is 1-based")
        with kernel_errstate():
            return float(_prf.envelope_at(self.key, np.asarray(v, dtype=np.int64), np.int64(n)))

    def to_json(self) -> dict:
        return {"kind": "envelopes", "seed": int(self.seed)}


UniformSource = Union[TimeStream, Envelopes]


def source_from_json(obj) -> UniformSource:
    if obj["kind"] == "time":
        return TimeStream(obj["seed"], obj.get("offset", 0))
    if obj["kind"] == "envelopes":
        return Envelopes(obj["seed"])
    raise ValueError(f"unknown source kind {obj['kind']!r}")


@dataclass(eq=False)
class Trajectory:
    """A realised walk. ``positions`` has shape ``(len + 1, d)``.

    When ``box`` is set the sequence is a teleporter relative to it and only
    edges crossed with an endpoint in the box count as reinforced.
    """

    params: ModelParams
    positions: np.ndarray
    env0: EdgeEnvironment = field(default_factory=EdgeEnvironment)
    source: Optional[UniformSource] = None
    box: Optional[Box] = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.int64)
        if pos.ndim != 2 or (pos.shape[0] and pos.shape[1] != self.params.d):
            pos = pos.reshape(-1, self.params.d)
        pos.setflags(write=False)
        self.positions = pos

    @property
    def length(self) -> int:
        return self.positions.shape[0] - 1

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def start(self) -> Point:
        return as_point(self.positions[0])

    @property
    def end(self) -> Point:
        return as_point(self.positions[-1])

    def point(self, t: int) -> Point:
        return as_point(self.positions[t])

    @cached_property
    def points(self) -> list[Point]:
        return [tuple(p) for p in self.positions.tolist()]

    @cached_property
    def path(self) -> PathSeq:
        return PathSeq(tuple(self.points), self.box)

    @cached_property
    def env(self) -> EdgeEnvironment:
        env = self.env0.copy()
        pts = self.points
        for u, v in zip(pts, pts[1:]):
            if sum(abs(x - y) for x, y in zip(u, v)) != 1:
                continue
            if self.box is not None and u not in self.box and v not in self.box:
                continue
            env.add(Edge(u, v))
        return env

    @cached_property
    def visit_counts(self) -> Counter:
        return Counter(self.points)

    def same_path(self, other: "Trajectory") -> bool:
        return np.array_equal(self.positions, other.positions)

    # -- serialisation

    _HEADER = struct.Struct("<IdQQ")

    def to_bytes(self) -> bytes:
        """Little-endian header ``(d, a, T, seed)``, the ``d`` start
        coordinates as int64, then one neighbour-index byte per step."""
        if self.positions.shape[0] == 0:
            raise ValueError("cannot encode an empty trajectory")
        seed = int(self.source.seed) & _prf.MASK64 if self.source is not None else 0
        steps = np.diff(self.positions, axis=0)
        if steps.size and not np.all(np.abs(steps).sum(axis=1) == 1):
            raise ValueError("binary framing encodes lattice steps only")
        axis = np.argmax(steps != 0, axis=1) if steps.size else np.zeros(0, dtype=np.int64)
        sign = steps[np.arange(steps.shape[0]), axis] if steps.size else np.zeros(0, dtype=np.int64)
        idx = (2 * axis + (sign < 0)).astype(np.uint8)
        head = self._HEADER.pack(self.params.d, self.params.a, self.length, seed)
        return head + self.positions[0].astype("<i8").tobytes() + idx.tobytes()

    @classmethod
    def from_bytes(cls, buf: bytes, params: Optional[ModelParams] = None) -> "Trajectory":
        d, a, steps, seed = cls._HEADER.unpack_from(buf, 0)
        off = cls._HEADER.size
        start = np.frombuffer(buf, dtype="<i8", count=d, offset=off).astype(np.int64)
        idx = np.frombuffer(buf, dtype=np.uint8, count=steps, offset=off + 8 * d)
        if params is None:
            params = ModelParams(d, a)
        elif params.d != d or params.a != a:
            raise ValueError("header disagrees with supplied params")
        table = np.array([neighbor_offset(d, i) for i in range(2 * d)], dtype=np.int64)
        pos = np.vstack([start, start + np.cumsum(table[idx], axis=0)]) if steps else start[None, :]
        return cls(params, pos, source=TimeStream(seed))

    def to_json(self) -> dict:
        obj = {"params": self.params.to_json(),
               "positions": self.positions.tolist(),
               "env0": self.env0.to_json(),
               "source": self.source.to_json() if self.source is not None else None}
        if self.box is not None:
            obj["box"] = self.box.to_json()
        return obj

    @classmethod
    def from_json(cls, obj) -> "Trajectory":
        params = ModelParams.from_json(obj["params"])
        src = source_from_json(obj["source"]) if obj.get("source") else None
        box = Box.from_json(obj["box"]) if obj.get("box") else None
        pos = np.asarray(obj["positions"], dtype=np.int64).reshape(-1, params.d)
        return cls(params, pos, EdgeEnvironment.from_json(obj["env0"]), src, box)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), separators=(",", ":"))


# ---------------------------------------------------------------- transition law

def transition_probs(env: EdgeEnvironment, a: float, u: Sequence[int]) -> np.ndarray:
    """Step probabilities from ``u`` aligned with ``neighbors(u)``."""
    u = as_point(u)
    w = np.array([1.0 + a * (Edge(u, v) in env) for v in neighbors(u)])
    return w / w.sum()


def step_index(probs: Sequence[float], U: float) -> int:
    """Index ``i`` with ``U`` in ``[sum(p[:i]), sum(p[:i+1]))``."""
    if not 0.0 <= U < 1.0:
        raise ValueError("U must lie in [0, 1)")
    cum = np.cumsum(probs)
    return min(int(np.searchsorted(cum, U, side="right")), len(cum) - 1)


def step(u: Sequence[int], probs: Sequence[float], U: float) -> Point:
    return neighbors(u)[step_index(probs, U)]


# ---------------------------------------------------------------- simulation

def _start_array(start, d) -> np.ndarray:
    arr = np.asarray(start, dtype=np.int64).reshape(-1)
    if arr.shape[0] != d:
        raise ValueError(f"start has dimension {arr.shape[0]}, expected {d}")
    return arr


def simulate(params: ModelParams, start: Sequence[int], T: int,
             src: UniformSource, env0: Optional[EdgeEnvironment] = None) -> Trajectory:
    """ORRW of ``T`` steps from ``start`` on top of ``env0``."""
    if T < 0:
        raise ValueError("T must be nonnegative")
    env0 = env0 if env0 is not None else EdgeEnvironment()
    st = _start_array(start, params.d)
    lo, axis = env0.as_arrays(params.d)
    envelopes = isinstance(src, Envelopes)
    offset = 0 if envelopes else src.offset
    with kernel_errstate():
        pos = K.walk_path(params.a, st, int(T), envelopes, src.key, np.int64(offset), lo, axis)
    return Trajectory(params, pos, env0.copy(), src)


def simulate_reference(params: ModelParams, start: Sequence[int], T: int,
                       src: UniformSource, env0: Optional[EdgeEnvironment] = None) -> Trajectory:
    """Slow pure-Python ORRW built from ``transition_probs`` and ``step``."""
    env = env0.copy() if env0 is not None else EdgeEnvironment()
    u = as_point(start)
    visits = Counter([u])
    pts = [u]
    for t in range(1, T + 1):
        U = src.at(u, visits[u]) if isinstance(src, Envelopes) else src.at(src.offset + t)
        v = step(u, transition_probs(env, params.a, u), U)
        env.add(Edge(u, v))
        visits[v] += 1
        pts.append(v)
        u = v
    return Trajectory(params, np.array(pts, dtype=np.int64),
                      env0.copy() if env0 is not None else EdgeEnvironment(), src)


def srw_trajectory(d: int, start: Sequence[int], T: int, seed: int, offset: int = 0) -> np.ndarray:
    """Simple random walk positions stepping to neighbour ``floor(U_t * 2d)``."""
    u = _prf.stream_uniforms(seed, offset + 1, T)
    idx = np.floor(u * (2 * d)).astype(np.int64)
    table = np.array([neighbor_offset(d, i) for i in range(2 * d)], dtype=np.int64)
    st = _start_array(start, d)
    return np.vstack([st, st + np.cumsum(table[idx], axis=0)]) if T else st[None, :]


# ---------------------------------------------------------------- couplings

def natural_couple(params: ModelParams, startA, envA: Optional[EdgeEnvironment],
                   startB, envB: Optional[EdgeEnvironment], T: int, seed: int):
    """Two walks driven by the same time stream ``TimeStream(seed)``."""
    src = TimeStream(seed)
    return simulate(params, startA, T, src, envA), simulate(params, startB, T, src, envB)


def first_step_disagreement(params: ModelParams, start, envA: EdgeEnvironment,
                            envB: EdgeEnvironment) -> float:
    """Exact probability that one shared uniform sends the two walks to
    different neighbours of ``start``."""
    ca = np.concatenate([[0.0], np.cumsum(transition_probs(envA, params.a, start))])
    cb = np.concatenate([[0.0], np.cumsum(transition_probs(envB, params.a, start))])
    ca[-1] = cb[-1] = 1.0
    overlap = np.clip(np.minimum(ca[1:], cb[1:]) - np.maximum(ca[:-1], cb[:-1]), 0.0, None)
    return float(1.0 - overlap.sum())


def concatenate(W1: Trajectory, W2: Trajectory) -> Trajectory:
    """``W1`` followed by ``W2`` translated to ``W1``'s endpoint."""
    if W1.params != W2.params:
        raise ValueError("concatenated trajectories must share params")
    if W1.box is not None or W2.box is not None:
        raise ValueError("concatenation is defined for strict paths")
    if np.any(W2.positions[0] != 0):
        raise ValueError("second trajectory must start at the origin")
    shift = W1.positions[-1]
    pos = np.vstack([W1.positions, W2.positions[1:] + shift])
    env0 = W1.env0.union(W2.env0.translate(shift))
    return Trajectory(W1.params, pos, env0, W1.source)


def couple_concat(params: ModelParams, t1: int, t2: int, seed: int):
    """``W`` from ``U_1..U_{t1+t2}`` and ``W~ = W1 ++ W2`` with ``W1`` from
    ``U_1..U_{t1}`` and ``W2`` from ``U_{t1+1}..U_{t1+t2}``."""
    if t1 < 0 or t2 < 0:
        raise ValueError("t1 and t2 must be nonnegative")
    origin = (0,) * params.d
    W = simulate(params, origin, t1 + t2, TimeStream(seed))
    W1 = simulate(params, origin, t1, TimeStream(seed))
    W2 = simulate(params, origin, t2, TimeStream(seed, offset=t1))
    return W, concatenate(W1, W2)


def concat_defects(params: ModelParams, t1: int, t2: int, seeds: Iterable[int]) -> np.ndarray:
    """``max_s ||W(s) - W~(s)||_2`` for each seed."""
    out = []
    for seed in seeds:
        W, Wt = couple_concat(params, t1, t2, seed)
        diff = (W.positions - Wt.positions).astype(np.float64)
        out.append(float(np.sqrt((diff ** 2).sum(axis=1).max())))
    return np.array(out)


def steps_as_indices(traj: Trajectory) -> np.ndarray:
    """Neighbour index of every step of a strict path."""
    pts = traj.points
    return np.array([neighbor_index(u, v) for u, v in zip(pts, pts[1:])], dtype=np.int64)

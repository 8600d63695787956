"""Demon walks: an adversary picks where the walk re-enters a box.

Inside the box the walk moves by the ORRW law on the teleporter's own
environment (edges crossed with an endpoint in the box). Whenever it sits
outside, the strategy is consulted and answers with a vertex of the box
adjacent to the current position, or a boundary edge ``{x, y}`` which appends
``x`` and then ``y``. A strategy may return ``None`` to end the run.
"""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import _prf
from ._backend import kernel_errstate
from .engine import (EdgeEnvironment, Envelopes, ModelParams, Trajectory, UniformSource,
                     simulate, step, transition_probs)
from .lattice import Box, Edge, Point, adjacent, as_point, boundary_edges, neighbors, restrict

_DOMAIN_DEMON = np.uint64(0x44454D4F4E52414E)  # "DEMONRAN"


@dataclass(frozen=True)
class EnterVertex:
    x: Point

    def to_json(self) -> dict:
        return {"vertex": list(self.x)}


@dataclass(frozen=True)
class EnterEdge:
    edge: Edge

    def to_json(self) -> dict:
        return {"edge": self.edge.to_json()}


Decision = Union[EnterVertex, EnterEdge]


class IllegalDecision(ValueError):
    pass


def decision_from_json(obj) -> Decision:
    if "vertex" in obj:
        return EnterVertex(as_point(obj["vertex"]))
    return EnterEdge(Edge.from_json(obj["edge"]))


class DemonStrategy:
    """Base class. ``decide`` sees the teleporter so far (empty for the first
    call) and returns a decision or ``None``."""

    name = "base"

    def __init__(self, box: Box, seed: int = 0):
        self.box = box
        self.seed = int(seed)
        with kernel_errstate():
            self._key = np.uint64(_prf.domain_key(_prf.as_seed(seed), _DOMAIN_DEMON))

    def uniform(self, history_len: int, j: int = 0) -> float:
        """External randomisation: a uniform keyed by the history length."""
        with kernel_errstate():
            return float(_prf.envelope_at(self._key, np.array([history_len, j], dtype=np.int64), 1))

    def decide(self, history: Sequence[Point]) -> Optional[Decision]:
        raise NotImplementedError

    def params_json(self) -> dict:
        return {}


def _sorted_boundary(box: Box) -> list[Edge]:
    return sorted(boundary_edges(box))


def _inside_end(e: Edge, box: Box) -> Point:
    return e.lo if e.lo in box else e.hi


class FixedEdge(DemonStrategy):
    """Always enter through one boundary edge."""

    name = "fixed-edge"

    def __init__(self, box: Box, seed: int = 0, edge: Optional[Edge] = None):
        super().__init__(box, seed)
        self.edge = edge if edge is not None else _sorted_boundary(box)[0]

    def decide(self, history):
        return EnterEdge(self.edge)

    def params_json(self):
        return {"edge": self.edge.to_json()}


class UniformRandomEdge(DemonStrategy):
    """Enter through a uniformly chosen boundary edge."""

    name = "uniform-edge"

    def __init__(self, box: Box, seed: int = 0):
        super().__init__(box, seed)
        self._edges = _sorted_boundary(box)

    def decide(self, history):
        k = int(self.uniform(len(history)) * len(self._edges))
        return EnterEdge(self._edges[min(k, len(self._edges) - 1)])


class NearestToExit(DemonStrategy):
    """Start at the center, then step straight back in from the exit vertex."""

    name = "nearest-to-exit"

    def decide(self, history):
        if not history:
            return EnterVertex(self.box.center)
        x = history[-1]
        return EnterVertex(next(v for v in neighbors(x) if v in self.box))


class GreedyDense(DemonStrategy):
    """Enter through the boundary edge whose inside end is closest (Euclidean)
    to the most visited vertex of the box; ties go to the smallest edge."""

    name = "greedy-dense"

    def __init__(self, box: Box, seed: int = 0):
        super().__init__(box, seed)
        self._edges = _sorted_boundary(box)

    def decide(self, history):
        counts = Counter(v for v in history if v in self.box)
        if not counts:
            return EnterVertex(self.box.center)
        top = max(counts.values())
        dense = min(v for v, c in counts.items() if c == top)

        def dist2(e):
            y = _inside_end(e, self.box)
            return sum((p - q) ** 2 for p, q in zip(y, dense))

        return EnterEdge(min(self._edges, key=lambda e: (dist2(e), e)))


_CATALOG = {cls.name: cls for cls in (FixedEdge, UniformRandomEdge, NearestToExit, GreedyDense)}


def builtin_strategies() -> dict[str, type]:
    return dict(_CATALOG)


def make_strategy(name: str, box: Box, seed: int = 0, params: Optional[dict] = None) -> DemonStrategy:
    """Build a catalog strategy from its name and a JSON parameter object."""
    if name not in _CATALOG:
        raise ValueError(f"unknown strategy {name!r}; choose from {sorted(_CATALOG)}")
    params = dict(params or {})
    if "edge" in params:
        params["edge"] = Edge.from_json(params["edge"])
    return _CATALOG[name](box, seed, **params)


# ---------------------------------------------------------------- running

def step_count_stop(n: int) -> Callable[[Sequence[Point]], bool]:
    """Stop once the teleporter has ``n`` steps."""
    return lambda hist: len(hist) - 1 >= n


def inbox_steps_stop(box: Box, n: int) -> Callable[[Sequence[Point]], bool]:
    """Stop once ``n`` steps have been taken from inside ``box``."""
    def stop(hist):
        return sum(1 for v in hist[:-1] if v in box) >= n
    return stop


def _check(decision: Decision, box: Box, current: Optional[Point]) -> None:
    if isinstance(decision, EnterVertex):
        if decision.x not in box:
            raise IllegalDecision(f"vertex {decision.x} is not in the box")
        if current is not None and not adjacent(decision.x, current):
            raise IllegalDecision(f"vertex {decision.x} is not adjacent to {current}")
    elif isinstance(decision, EnterEdge):
        e = decision.edge
        if (e.lo in box) == (e.hi in box) or len(e.lo) != box.d:
            raise IllegalDecision(f"{e} is not a boundary edge")
    else:
        raise IllegalDecision(f"unknown decision {decision!r}")


def run_demon_walk(strategy: DemonStrategy, box: Box, params: ModelParams,
                   stop: Callable[[Sequence[Point]], bool], source: UniformSource,
                   max_steps: Optional[int] = None,
                   decision_log: Optional[list] = None) -> Trajectory:
    """Demon walk in ``box``; in-box steps read ``source`` (time stream index
    = teleporter index of the new vertex, or envelopes by visit count)."""
    if box.d != params.d:
        raise ValueError("box dimension differs from params")
    hist: list[Point] = []
    env = EdgeEnvironment()
    visits: Counter = Counter()

    def push(v):
        hist.append(v)
        visits[v] += 1

    def apply(dec: Decision):
        _check(dec, box, hist[-1] if hist else None)
        if decision_log is not None:
            decision_log.append({"time": len(hist), "decision": dec.to_json()})
        if isinstance(dec, EnterVertex):
            if hist:
                env.add(Edge(hist[-1], dec.x))
            push(dec.x)
        else:
            e = dec.edge
            y = _inside_end(e, box)
            push(e.other(y))
            push(y)
            env.add(e)

    first = strategy.decide(())
    if first is not None:
        apply(first)
        while hist and not stop(hist):
            if max_steps is not None and len(hist) - 1 >= max_steps:
                break
            cur = hist[-1]
            if cur in box:
                if isinstance(source, Envelopes):
                    U = source.at(cur, visits[cur])
                else:
                    U = source.at(source.offset + len(hist))
                v = step(cur, transition_probs(env, params.a, cur), U)
                env.add(Edge(cur, v))
                push(v)
            else:
                dec = strategy.decide(tuple(hist))
                if dec is None:
                    break
                apply(dec)
    pos = np.array(hist, dtype=np.int64).reshape(len(hist), params.d)
    return Trajectory(params, pos, EdgeEnvironment(), source, box)


def dump_decision_log(log: list) -> str:
    return "".join(json.dumps(rec, separators=(",", ":")) + "\n" for rec in log)


# ---------------------------------------------------------------- restriction demon

class RestrictionDemon(DemonStrategy):
    """The demon whose walk equals the restriction of an ambient walk.

    It replays a process ``X`` that copies the teleporter inside the box and,
    outside, steps with the ambient envelopes ``U_{v,n}`` (``v`` outside) on
    X's full environment. Its answer is X's next entry: the vertex when X
    returns in one step, else the crossing edge. Entries after the ambient
    horizon end the run.
    """

    name = "restriction"

    def __init__(self, box: Box, params: ModelParams, envelopes: Envelopes,
                 start: Sequence[int], horizon: int):
        super().__init__(box, envelopes.seed)
        self.params = params
        self.env_src = envelopes
        self.start = as_point(start)
        self.horizon = horizon
        self._x = self.start
        self._time = 0                 # ambient time of X
        self._env = EdgeEnvironment()
        self._visits = Counter([self.start])
        self._synced = 0               # teleporter entries already mirrored by X
        self._anchor = (0, 0)          # (teleporter index, ambient time) of last entry

    def ambient_time(self, index: int) -> int:
        """Ambient time of teleporter entry ``index`` (at or after the last entry)."""
        i0, s0 = self._anchor
        return s0 + (index - i0)

    def _move(self, v: Point) -> None:
        self._env.add(Edge(self._x, v))
        self._x = v
        self._visits[v] += 1
        self._time += 1

    def _follow(self, history: Sequence[Point]) -> None:
        for i in range(self._synced, len(history)):
            v = history[i]
            if not adjacent(self._x, v):
                raise RuntimeError("teleporter cannot be followed by the replay process")
            self._move(v)
        self._synced = len(history)

    def _run_outside(self) -> Optional[tuple[Point, int]]:
        """Step X outside until it enters the box. Returns ``(previous vertex,
        number of outside steps)`` or None when the horizon comes first."""
        steps = 0
        while True:
            if self._time >= self.horizon:
                return None
            u = self._x
            U = self.env_src.at(u, self._visits[u])
            v = step(u, transition_probs(self._env, self.params.a, u), U)
            self._move(v)
            steps += 1
            if v in self.box:
                return u, steps

    def decide(self, history):
        if not history:
            if self.start in self.box:
                self._synced = 1
                self._anchor = (0, 0)
                return EnterVertex(self.start)
            entry = self._run_outside()
            if entry is None:
                return None
            prev, _ = entry
            self._synced = 2
            self._anchor = (1, self._time)
            return EnterEdge(Edge(prev, self._x))
        self._follow(history)
        entry = self._run_outside()
        if entry is None:
            return None
        prev, steps = entry
        if steps == 1:
            self._synced = len(history) + 1
            self._anchor = (len(history), self._time)
            return EnterVertex(self._x)
        self._synced = len(history) + 2
        self._anchor = (len(history) + 1, self._time)
        return EnterEdge(Edge(prev, self._x))


def restriction_demon_replay(ambient_seed: int, box: Box, ambient_T: int, params: ModelParams,
                             start: Optional[Sequence[int]] = None,
                             decision_log: Optional[list] = None):
    """``(restrict(W, box), demon walk)`` for the ambient walk ``W`` driven by
    ``Envelopes(ambient_seed)``; the demon walk uses the same envelopes inside
    the box, so the two sequences coincide."""
    start = (0,) * params.d if start is None else as_point(start)
    src = Envelopes(ambient_seed)
    W = simulate(params, start, ambient_T, src)
    restricted = restrict(W.path, box)
    demon = RestrictionDemon(box, params, src, start, ambient_T)

    def stop(hist):
        return demon.ambient_time(len(hist) - 1) >= ambient_T

    run = run_demon_walk(demon, box, params, stop, src, decision_log=decision_log)
    rtraj = Trajectory(params, np.array(restricted.vertices, dtype=np.int64).reshape(-1, params.d),
                       EdgeEnvironment(), src, box)
    return rtraj, run

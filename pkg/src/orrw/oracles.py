"""Exact reference computations: weighted path enumeration for ORRW, escape
probabilities, and sparse linear solves for simple random walk on balls."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .engine import EdgeEnvironment, ModelParams
from .estimators import EscapeConfig
from .lattice import Edge, Point, as_point, neighbors

PATH_BUDGET = 10 ** 8
GREEN_UNKNOWNS = 120_000


class BudgetExceeded(ValueError):
    pass


def _check_budget(d: int, t: int) -> None:
    if (2 * d) ** t > PATH_BUDGET:
        raise BudgetExceeded(f"(2d)^t = {(2 * d) ** t} paths exceeds the budget {PATH_BUDGET}")


def _probs(env: set, a: float, u: Point, nbrs: list[Point]) -> list[float]:
    w = [1.0 + a if Edge(u, v) in env else 1.0 for v in nbrs]
    s = sum(w)
    return [x / s for x in w]


@dataclass
class ExactDistribution:
    support: dict          # endpoint -> probability
    t: int
    params: ModelParams
    expectation: Optional[float] = None

    def prob(self, v) -> float:
        return self.support.get(as_point(v), 0.0)

    def to_json(self) -> dict:
        return {"t": self.t, "params": self.params.to_json(),
                "support": [{"v": list(v), "p": p} for v, p in sorted(self.support.items())],
                "expectation": self.expectation}


def enumerate_orrw(params: ModelParams, t_max: int, start: Optional[Sequence[int]] = None,
                   env0: Optional[EdgeEnvironment] = None,
                   functional: Optional[Callable[[tuple], float]] = None) -> ExactDistribution:
    """Endpoint law of ``t_max`` ORRW steps by depth-first enumeration of all
    ``(2d)^t_max`` paths; ``functional(path)`` is averaged when given."""
    _check_budget(params.d, t_max)
    start = (0,) * params.d if start is None else as_point(start)
    env = set(env0) if env0 is not None else set()
    a = params.a
    support: dict = {}
    acc = [0.0]
    path = [start]

    def dfs(u, w, depth):
        if depth == t_max:
            support[u] = support.get(u, 0.0) + w
            if functional is not None:
                acc[0] += w * functional(tuple(path))
            return
        nbrs = neighbors(u)
        for v, p in zip(nbrs, _probs(env, a, u, nbrs)):
            e = Edge(u, v)
            new = e not in env
            if new:
                env.add(e)
            path.append(v)
            dfs(v, w * p, depth + 1)
            path.pop()
            if new:
                env.discard(e)

    dfs(start, 1.0, 0)
    return ExactDistribution(support, t_max, params, acc[0] if functional is not None else None)


def enumerate_orrw_memo(params: ModelParams, t_max: int, start: Optional[Sequence[int]] = None,
                        env0: Optional[EdgeEnvironment] = None) -> dict:
    """Endpoint law by memoised recursion on ``(position, environment, steps left)``."""
    _check_budget(params.d, t_max)
    start = (0,) * params.d if start is None else as_point(start)
    a = params.a

    @lru_cache(maxsize=None)
    def law(u, env, k):
        if k == 0:
            return ((u, 1.0),)
        nbrs = neighbors(u)
        w = [(1.0 + a) if Edge(u, v) in env else 1.0 for v in nbrs]
        tot = sum(w)
        out: dict = {}
        for v, wv in zip(nbrs, w):
            for end, q in law(v, env | {Edge(u, v)}, k - 1):
                out[end] = out.get(end, 0.0) + wv / tot * q
        return tuple(out.items())

    return dict(law(start, frozenset(env0 or ()), t_max))


def exact_moments(params: ModelParams, t: int, coord: int = 0) -> float:
    """``E[W(t)_coord^2]`` for the walk from the origin."""
    dist = enumerate_orrw(params, t)
    return float(sum(p * v[coord] ** 2 for v, p in dist.support.items()))


# ---------------------------------------------------------------- escape

def _escape_ok(v: Point, t: int, cfg: EscapeConfig) -> bool:
    R, r = cfg.R, cfg.r
    if max(abs(x) for x in v) > 4 * R or v in cfg.A:
        return False
    if t >= R * R and max(abs(x) for x in v) > R:
        return False
    if t >= 40 * r * r and max(abs(x - c) for x, c in zip(v, cfg.u)) <= 2 * r:
        return False
    return True


def exact_escape(z: Sequence[int], cfg: EscapeConfig, params: ModelParams) -> float:
    """Exact escape probability from ``z`` by enumeration, pruning prefixes
    that already violate a condition."""
    H = cfg.horizon
    _check_budget(params.d, H)
    a = params.a
    env: set = set()

    def dfs(u, t):
        if t == H:
            return 1.0
        nbrs = neighbors(u)
        total = 0.0
        for v, p in zip(nbrs, _probs(env, a, u, nbrs)):
            if not _escape_ok(v, t + 1, cfg):
                continue
            e = Edge(u, v)
            new = e not in env
            if new:
                env.add(e)
            total += p * dfs(v, t + 1)
            if new:
                env.discard(e)
        return total

    return dfs(as_point(z), 0)


def exact_escape_memo(z: Sequence[int], cfg: EscapeConfig, params: ModelParams) -> float:
    """Same probability by memoised recursion over ``(position, environment, time)``."""
    H = cfg.horizon
    _check_budget(params.d, H)
    a = params.a

    @lru_cache(maxsize=None)
    def prob(u, env, t):
        if t == H:
            return 1.0
        nbrs = neighbors(u)
        w = [(1.0 + a) if Edge(u, v) in env else 1.0 for v in nbrs]
        tot = sum(w)
        return sum(wv / tot * prob(v, env | {Edge(u, v)}, t + 1)
                   for v, wv in zip(nbrs, w) if _escape_ok(v, t + 1, cfg))

    return prob(as_point(z), frozenset(), 0)


def exact_capacity(cfg: EscapeConfig, params: ModelParams) -> float:
    return sum(exact_escape(z, cfg, params) for z in sorted(cfg.A) if z in cfg.box_plus)


# ---------------------------------------------------------------- simple random walk solves

def ball_points(d: int, radius: float) -> np.ndarray:
    """Lattice points with ``||x||_2 <= radius``, in lexicographic order."""
    R = int(math.floor(radius))
    axis = np.arange(-R, R + 1)
    grid = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    keep = (grid.astype(np.float64) ** 2).sum(axis=1) <= radius * radius + 1e-9
    return grid[keep]


def _index(points: np.ndarray) -> dict:
    return {tuple(p): i for i, p in enumerate(points.tolist())}


def _srw_kernel(points: np.ndarray):
    """Sparse sub-stochastic SRW matrix among ``points`` (moves leaving the set
    are dropped)."""
    n, d = points.shape
    idx = _index(points)
    rows, cols = [], []
    for i, p in enumerate(points.tolist()):
        for q in neighbors(p):
            j = idx.get(q)
            if j is not None:
                rows.append(i)
                cols.append(j)
    vals = np.full(len(rows), 1.0 / (2 * d))
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n)), idx


def _solve(A, b):
    x, info = spla.cg(A, b, rtol=1e-14, atol=0.0, maxiter=20 * A.shape[0])
    res = float(np.abs(A @ x - b).max())
    if info != 0 or res > 1e-10:
        x = spla.spsolve(A.tocsc(), b)
        res = float(np.abs(A @ x - b).max())
    return x, res


@dataclass
class GreenTable:
    d: int
    radius: float
    points: np.ndarray
    values: np.ndarray
    residual: float

    def __post_init__(self):
        self._idx = {tuple(p): i for i, p in enumerate(self.points.tolist())}

    def __call__(self, x) -> float:
        i = self._idx.get(as_point(x))
        return float(self.values[i]) if i is not None else 0.0

    @property
    def g0(self) -> float:
        return self((0,) * self.d)

    def return_probability(self) -> float:
        """Probability of returning to the origin before leaving the ball."""
        return 1.0 - 1.0 / self.g0

    def to_json(self) -> dict:
        return {"d": self.d, "radius": self.radius, "g0": self.g0, "residual": self.residual,
                "unknowns": int(self.points.shape[0])}


def srw_green(d: int, truncation_radius: float) -> GreenTable:
    """Expected visits (time 0 included) of SRW from the origin to each site
    of the Euclidean ball before leaving it: solves ``(I - P) g = e_0``."""
    if d <= 2:
        raise ValueError("the Green's function diverges for d <= 2")
    pts = ball_points(d, truncation_radius)
    if pts.shape[0] > GREEN_UNKNOWNS:
        raise BudgetExceeded(f"{pts.shape[0]} unknowns exceeds {GREEN_UNKNOWNS}")
    P, idx = _srw_kernel(pts)
    A = (sp.identity(pts.shape[0], format="csr") - P).tocsr()
    b = np.zeros(pts.shape[0])
    b[idx[(0,) * d]] = 1.0
    # P is symmetric on the ball, so the adjoint system is the same
    g, res = _solve(A, b)
    return GreenTable(d, float(truncation_radius), pts, g, res)


@dataclass
class ExitProbability:
    value: float
    residual: float
    edge: Edge
    unknowns: int

    def to_json(self) -> dict:
        return {"value": self.value, "residual": self.residual,
                "edge": self.edge.to_json(), "unknowns": self.unknowns}


def exact_exit_through_edge(d: int, L: float, target_edge: Optional[Edge] = None) -> ExitProbability:
    """Probability that SRW from 0 first leaves ``{||y||_2 <= L}`` through
    ``target_edge`` before returning to 0 (default edge: ``floor(L) e1`` to
    ``(floor(L)+1) e1``)."""
    if L < 1:
        raise ValueError("L must be at least 1")
    pts = ball_points(d, L)
    if pts.shape[0] > GREEN_UNKNOWNS:
        raise BudgetExceeded(f"{pts.shape[0]} unknowns exceeds {GREEN_UNKNOWNS}")
    m = int(math.floor(L))
    if target_edge is None:
        target_edge = Edge((m,) + (0,) * (d - 1), (m + 1,) + (0,) * (d - 1))
    origin = (0,) * d
    idx = _index(pts)
    inside_end = target_edge.lo if target_edge.lo in idx else target_edge.hi
    outside_end = target_edge.other(inside_end)
    if inside_end not in idx or outside_end in idx:
        raise ValueError("target edge must cross the sphere boundary")
    o = idx[origin]
    # unknowns h(y) for y != 0; 0 is absorbing with value 0
    keep = np.array([i for i in range(pts.shape[0]) if i != o])
    sub = pts[keep]
    P, sidx = _srw_kernel(sub)
    A = (sp.identity(sub.shape[0], format="csr") - P).tocsr()
    b = np.zeros(sub.shape[0])
    b[sidx[inside_end]] = 1.0 / (2 * d)
    h, res = _solve(A, b)
    p = sum(h[sidx[v]] for v in neighbors(origin) if v in sidx) / (2 * d)
    if inside_end == origin:
        p += 1.0 / (2 * d)
    return ExitProbability(float(p), res, target_edge, int(sub.shape[0]))

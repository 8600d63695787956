"""Trajectory functionals: heavy blocks, relaxed times, stopping times,
block classification and range statistics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels as K
from .engine import Trajectory
from .lattice import Box, Point, as_point

INF = math.inf


def heavy_threshold(r: int, kappa: float) -> float:
    return float(r) ** kappa


def spend_threshold(rho: float) -> int:
    """``ceil(rho^2 log^3 rho)`` with natural log, the cube clamped below at 1."""
    return max(1, math.ceil(rho ** 2 * max(math.log(rho), 1.0) ** 3)) if rho > 0 else 1


def min_relaxed_radius(a: float) -> Optional[int]:
    """Smallest integer ``r >= 1`` with ``r >= a^(-1/3)``; None when ``a = 0``."""
    if a <= 0:
        return None
    r = max(1, math.ceil(a ** (-1.0 / 3.0)))
    # settle float rounding with the exact comparison a r^3 >= 1
    while r > 1 and a * (r - 1) ** 3 >= 1:
        r -= 1
    while a * r ** 3 < 1:
        r += 1
    return r


def min_block_radius(R: int, delta: float) -> int:
    """Smallest integer ``r >= R^delta``."""
    r = max(1, math.ceil(R ** delta))
    while r > 1 and (r - 1) >= R ** delta:
        r -= 1
    return r


def first_visit_indices(positions: np.ndarray) -> np.ndarray:
    """Indices at which a vertex is visited for the first time, ascending."""
    if positions.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    _, idx = np.unique(positions, axis=0, return_index=True)
    return np.sort(idx).astype(np.int64)


def _linf_from(positions: np.ndarray, center: Sequence[int]) -> np.ndarray:
    return np.abs(positions - np.asarray(center, dtype=np.int64)).max(axis=1)


# ---------------------------------------------------------------- counts

def distinct_in_box(traj: Trajectory, t: int, box: Box) -> int:
    """Number of distinct vertices of ``box`` among ``W(0..t)``."""
    if t > traj.length:
        raise ValueError("t exceeds trajectory length")
    if t < 0:
        return 0
    pos = traj.positions[: t + 1]
    pos = pos[_linf_from(pos, box.center) <= box.radius]
    return int(np.unique(pos, axis=0).shape[0]) if pos.size else 0


def is_heavy(traj: Trajectory, t: int, box: Box, kappa: float) -> bool:
    if box.radius < 1:
        raise ValueError("heaviness is defined for radius >= 1")
    return distinct_in_box(traj, t, box) >= heavy_threshold(box.radius, kappa)


def max_vertex_visits(traj: Trajectory, t: int, region: Optional[Box] = None) -> int:
    """Largest visit count up to time ``t`` among vertices in ``region``."""
    pos = traj.positions[: t + 1]
    if region is not None:
        pos = pos[_linf_from(pos, region.center) <= region.radius]
    if pos.size == 0:
        return 0
    _, counts = np.unique(pos, axis=0, return_counts=True)
    return int(counts.max())


def range_and_radius(traj: Trajectory, t: int) -> tuple[int, float]:
    """``|{W(s): s <= t}|`` and ``max_{s<=t} ||W(s) - W(0)||_2``."""
    pos = traj.positions[: t + 1]
    rng = int(np.unique(pos, axis=0).shape[0])
    disp = pos - pos[0]
    return rng, float(np.sqrt((disp.astype(np.float64) ** 2).sum(axis=1).max()))


# ---------------------------------------------------------------- relaxed times

@dataclass
class RelaxedTimeSet:
    times: list[int]
    R: int
    lower: float
    queried: list[int] = field(default_factory=list)

    def __contains__(self, t: int) -> bool:
        return t in set(self.times)


def relaxed_mask(positions: np.ndarray, query_times: np.ndarray, R: int,
                 a: float, kappa: float) -> np.ndarray:
    """Boolean array: is each query time ``R``-locally relaxed."""
    q = np.asarray(query_times, dtype=np.int64)
    r_min = min_relaxed_radius(a)
    if r_min is None or r_min > R:
        return np.ones(q.shape[0], dtype=bool)
    fv = first_visit_indices(positions)
    return K.relaxed_flags(positions, fv, q, np.int64(r_min), np.int64(R), float(kappa))


def relaxed_times(traj: Trajectory, R: int, query_times: Optional[Sequence[int]] = None) -> RelaxedTimeSet:
    """Query times ``t`` at which no block ``W(t) + [-r,r]^d`` with integer
    ``r`` in ``[a^(-1/3), R]`` is heavy."""
    q = np.arange(traj.length + 1) if query_times is None else np.asarray(query_times, dtype=np.int64)
    if q.size and (q.min() < 0 or q.max() > traj.length):
        raise ValueError("query time out of range")
    mask = relaxed_mask(traj.positions, q, R, traj.params.a, traj.params.kappa)
    lower = traj.params.a ** (-1.0 / 3.0) if traj.params.a > 0 else INF
    return RelaxedTimeSet(sorted(int(t) for t in q[mask]), R, lower, sorted(int(t) for t in q))


# ---------------------------------------------------------------- stopping times

@dataclass
class StoppingTimeReport:
    tau_spend: float = INF
    tau_heavy: float = INF
    spend_box: Optional[Box] = None
    spend_threshold: Optional[int] = None
    heavy_box: Optional[Box] = None
    heavy_count: Optional[int] = None

    def to_json(self) -> dict:
        def num(x):
            return None if x == INF else int(x)
        return {"tau_spend": num(self.tau_spend), "tau_heavy": num(self.tau_heavy),
                "spend_box": self.spend_box.to_json() if self.spend_box else None,
                "spend_threshold": self.spend_threshold,
                "heavy_box": self.heavy_box.to_json() if self.heavy_box else None,
                "heavy_count": self.heavy_count}


def tau_spend(traj: Trajectory, box: Box, threshold: Optional[int] = None) -> float:
    """First ``t`` by which ``W`` has spent ``threshold`` time steps in ``box``."""
    if threshold is None:
        threshold = spend_threshold(box.radius)
    if threshold < 1:
        raise ValueError("threshold must be at least 1")
    inside = _linf_from(traj.positions, box.center) <= box.radius
    occ = np.cumsum(inside)
    hit = np.nonzero(occ >= threshold)[0]
    return int(hit[0]) if hit.size else INF


def tau_heavy(traj: Trajectory, R: int, delta: Optional[float] = None,
              kappa: Optional[float] = None, radii: Optional[tuple[int, int]] = None,
              center_bound: Optional[int] = None) -> StoppingTimeReport:
    """First time a block ``u + [-r,r]^d`` with ``u`` in ``[-2R,2R]^d`` and
    integer ``r`` in ``[R^delta, R]`` becomes heavy.

    Only blocks containing a newly visited vertex can become heavy, so the
    scan runs over first visits; radii whose threshold exceeds the current
    range are skipped.
    """
    delta = traj.params.delta if delta is None else delta
    kappa = traj.params.kappa if kappa is None else kappa
    r_lo, r_hi = radii if radii is not None else (min_block_radius(R, delta), R)
    bound = 2 * R if center_bound is None else center_bound
    if traj.positions.shape[0] == 0:
        return StoppingTimeReport()
    fv = first_visit_indices(traj.positions)
    pts = np.ascontiguousarray(traj.positions[fv])
    m, r, c, u = K.first_heavy_block(pts, True, np.int64(r_lo), np.int64(r_hi),
                                     np.int64(-bound), np.int64(bound), float(kappa), False)
    if m < 0:
        return StoppingTimeReport()
    return StoppingTimeReport(tau_heavy=int(fv[m]), heavy_box=Box(as_point(u), int(r)),
                              heavy_count=int(c))


def stopping_times(traj: Trajectory, R: int) -> StoppingTimeReport:
    """``tau_spend`` of ``[-R,R]^d`` and ``tau_heavy`` at scale ``R``."""
    rep = tau_heavy(traj, R)
    box = Box((0,) * traj.params.d, R)
    rep.spend_box = box
    rep.spend_threshold = spend_threshold(R)
    rep.tau_spend = tau_spend(traj, box, rep.spend_threshold)
    return rep


# ---------------------------------------------------------------- density of relaxed times

def window_steps(width: float) -> int:
    """Number of integers strictly inside ``(t, t + width)``."""
    return max(0, math.ceil(width) - 1)


def _relaxed_prefix(traj: Trajectory, scale: int) -> np.ndarray:
    mask = relaxed_mask(traj.positions, np.arange(traj.length + 1), scale,
                        traj.params.a, traj.params.kappa)
    return np.concatenate([[0], np.cumsum(mask)])


def _dense_enough(prefix: np.ndarray, t: int, width: float) -> bool:
    m = window_steps(width)
    count = prefix[t + m + 1] - prefix[t + 1]
    return count >= 0.9 * width + 1


def h2_event_holds(traj: Trajectory, R: int, eps: Optional[float] = None) -> bool:
    """Relaxed-time density event on ``[-R,R]^d`` up to ``tau_spend(R)``.

    Every ``t <= tau_spend(R) - R^eps`` with ``W(t)`` in the inner box needs
    at least ``0.9 R^eps + 1`` ``R``-relaxed times in ``(t, t + R^eps)``.
    When ``tau_spend(R)`` is not reached, times whose window runs past the end
    of the trajectory are not judged.
    """
    eps = traj.params.eps if eps is None else eps
    width = float(R) ** eps
    m = window_steps(width)
    box = Box((0,) * traj.params.d, R)
    tau = tau_spend(traj, box)
    t_max = traj.length - m if tau == INF else math.floor(tau - width)
    t_max = min(t_max, traj.length - m)
    if t_max < 0:
        return True
    inside = np.nonzero(_linf_from(traj.positions[: t_max + 1], box.center) <= R)[0]
    if inside.size == 0:
        return True
    prefix = _relaxed_prefix(traj, R)
    return all(_dense_enough(prefix, int(t), width) for t in inside)


@dataclass
class BlockLabel:
    center: Point
    tau_spend: float
    in_A: bool
    bad: bool

    @property
    def good(self) -> bool:
        return not self.bad


@dataclass
class BlockClassification:
    R: int
    r: int
    eps: float
    tau_spend_R: float
    n_blocks: int
    labels: dict[Point, BlockLabel]

    def label(self, center: Sequence[int]) -> BlockLabel:
        """Label of any block of the partition; unvisited blocks are good and
        outside ``A``."""
        c = as_point(center)
        if c in self.labels:
            return self.labels[c]
        if not block_center_valid(c, self.r, self.R):
            raise KeyError(f"{c} is not a block center")
        return BlockLabel(c, INF, False, False)

    @property
    def A(self) -> set[Point]:
        return {c for c, lab in self.labels.items() if lab.in_A}

    @property
    def B(self) -> set[Point]:
        return {c for c, lab in self.labels.items() if lab.bad}


def block_center_valid(c: Sequence[int], r: int, R: int) -> bool:
    return all(x % (2 * r) == 0 and abs(x) <= 1.5 * R for x in c)


def _centers_per_axis(r: int, R: int) -> np.ndarray:
    k = math.floor(1.5 * R / (2 * r))
    return 2 * r * np.arange(-k, k + 1)


def _blocks_containing(p: Sequence[int], r: int, R: int) -> list[Point]:
    opts = []
    for x in p:
        q, rem = divmod(x, 2 * r)
        cands = {2 * r * q, 2 * r * (q + 1)}
        ok = [c for c in cands if abs(x - c) <= r and abs(c) <= 1.5 * R]
        if not ok:
            return []
        opts.append(sorted(ok))
    out = [()]
    for o in opts:
        out = [prefix + (c,) for prefix in out for c in o]
    return out


def classify_blocks(traj: Trajectory, R: int, r: Optional[int] = None,
                    eps: Optional[float] = None) -> BlockClassification:
    """Label the blocks ``u + [-r,r]^d`` (``u`` in ``[-1.5R,1.5R]^d`` on the
    ``2r`` grid) visited by ``traj``.

    ``in_A``: ``tau_spend(block) <= tau_spend(R)`` with the block's time
    actually reached. ``bad``: some visit ``t <= tau_spend(block)`` sees fewer
    than ``0.9 r^eps + 1`` ``r``-relaxed times in ``(t, t + r^eps)``; visits
    whose window runs past the end of the trajectory are not judged.
    """
    params = traj.params
    r = min_block_radius(R, params.delta) if r is None else r
    eps = params.eps if eps is None else eps
    width = float(r) ** eps
    m = window_steps(width)
    tau_R = tau_spend(traj, Box((0,) * params.d, R))
    n_blocks = len(_centers_per_axis(r, R)) ** params.d
    centers = set()
    for p in np.unique(traj.positions, axis=0).tolist():
        centers.update(_blocks_containing(p, r, R))
    prefix = _relaxed_prefix(traj, r) if centers else None
    thr = spend_threshold(r)
    labels = {}
    for c in sorted(centers):
        box = Box(c, r)
        inside = np.nonzero(_linf_from(traj.positions, c) <= r)[0]
        occ_hit = inside[thr - 1] if inside.size >= thr else None
        tau_b = int(occ_hit) if occ_hit is not None else INF
        in_A = tau_b != INF and tau_b <= tau_R
        limit = min(tau_b, traj.length - m)
        judged = inside[inside <= limit]
        bad = any(not _dense_enough(prefix, int(t), width) for t in judged)
        labels[c] = BlockLabel(box.center, tau_b, bool(in_A), bool(bad))
    return BlockClassification(R, r, eps, tau_R, n_blocks, labels)

"""Monte Carlo estimators: escape events and capacity, variance and sigma,
displacement tails, site frequencies, Gaussian fit, exponent scans and
return probabilities.

Replica ``i`` of an estimator seeded with ``seed`` always uses
``derive_replica_seed(seed, i)``; statistics are reduced in replica order so
results do not depend on the thread count.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import stats

from . import _kernels as K
from . import _prf
from ._backend import kernel_errstate
from .demon import make_strategy, run_demon_walk, step_count_stop
from .diagnostics import min_block_radius
from .engine import ModelParams, TimeStream, Trajectory, simulate
from .lattice import Box, Point, as_point

Z3 = 3.0
_CONF3 = float(2 * stats.norm.cdf(Z3) - 1)


def wilson(k: int, n: int, z: float = Z3) -> tuple[float, float]:
    """Wilson score interval for ``k`` successes in ``n`` trials."""
    if n <= 0:
        return 0.0, 1.0
    level = _CONF3 if z == Z3 else float(2 * stats.norm.cdf(z) - 1)
    ci = stats.binomtest(int(k), int(n)).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


def _seed_word(seed: int) -> np.uint64:
    return _prf.as_seed(seed)


def _point_master(seed: int, z: Sequence[int]) -> np.uint64:
    with kernel_errstate():
        return np.uint64(_prf.point_key(_seed_word(seed), np.asarray(z, dtype=np.int64)))


def _batch(params: ModelParams, steps: int, seed: int, n: int, record: Iterable[int], start=None):
    rec = np.array(sorted(set(int(t) for t in record)), dtype=np.int64)
    st = np.zeros(params.d, dtype=np.int64) if start is None else np.asarray(start, dtype=np.int64)
    with kernel_errstate():
        snap, rng, maxd2, last = K.walk_batch(params.a, st, int(steps), _seed_word(seed), int(n), rec)
    return rec, snap, rng, maxd2, last


def replica_paths(params: ModelParams, start: Sequence[int], steps: int, seed: int, n: int) -> np.ndarray:
    """Full paths of replicas ``0..n-1``, shape ``(n, steps + 1, d)``."""
    with kernel_errstate():
        return K.paths_batch(params.a, np.asarray(start, dtype=np.int64), int(steps),
                             _seed_word(seed), int(n))


# ---------------------------------------------------------------- escape events

@dataclass(frozen=True)
class EscapeConfig:
    """Escape event for ``Lambda+ = u + [-2r, 2r]^d`` at scale ``R``."""

    u: Point
    r: int
    R: int
    A: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "u", as_point(self.u))
        object.__setattr__(self, "A", frozenset(as_point(p) for p in self.A))

    @property
    def box_plus(self) -> Box:
        return Box(self.u, 2 * self.r)

    @property
    def horizon(self) -> int:
        return 2 * self.R * self.R

    def with_A(self, A) -> "EscapeConfig":
        return EscapeConfig(self.u, self.r, self.R, frozenset(A))


def _encode(points: np.ndarray, span: int) -> np.ndarray:
    """Injective integer code for points with coordinates in ``[-span, span]``."""
    base = 2 * span + 1
    shifted = points.astype(np.int64) + span
    w = base ** np.arange(points.shape[-1], dtype=np.int64)
    return (shifted * w).sum(axis=-1)


def escape_indicators(paths: np.ndarray, cfg: EscapeConfig) -> np.ndarray:
    """Escape indicator of every path in ``paths`` (shape ``(n, len, d)``)."""
    paths = np.asarray(paths)
    if paths.ndim == 2:
        paths = paths[None]
    H, R = cfg.horizon, cfg.R
    if paths.shape[1] < H + 1:
        raise ValueError(f"trajectory shorter than the horizon {H}")
    w = paths[:, 1:H + 1, :]
    t = np.arange(1, H + 1)
    norm0 = np.abs(w).max(axis=2)
    ok = (norm0 <= 4 * R).all(axis=1)
    ok &= (norm0[:, t >= R * R] <= R).all(axis=1)
    late = t >= 40 * cfg.r * cfg.r
    if late.any():
        du = np.abs(w[:, late, :] - np.asarray(cfg.u)).max(axis=2)
        ok &= (du > 2 * cfg.r).all(axis=1)
    if cfg.A:
        span = max(4 * R, max(max(abs(c) for c in p) for p in cfg.A))
        inbox = norm0 <= 4 * R
        codes = _encode(np.clip(w, -span, span), span)
        hit = np.isin(codes, _encode(np.array(sorted(cfg.A)), span)) & inbox
        ok &= ~hit.any(axis=1)
    return ok


def escape_indicator(traj: Trajectory, cfg: EscapeConfig) -> bool:
    """Whether ``traj`` escapes ``A`` in ``Lambda+``: during ``[1, 2R^2]`` it
    stays in ``[-4R,4R]^d`` off ``A``, during ``[R^2, 2R^2]`` it stays in
    ``[-R,R]^d``, and during ``[40r^2, 2R^2]`` it stays off ``Lambda+``."""
    return bool(escape_indicators(traj.positions, cfg)[0])


def escape_outcomes(params: ModelParams, z: Sequence[int], cfg: EscapeConfig,
                    chain: Sequence[Iterable[Point]], n: int, seed: int) -> np.ndarray:
    """Boolean ``(n, len(chain))``: does replica ``i`` from ``z`` escape the
    ``j``-th set of a nested chain ``A_0 <= A_1 <= ...``. Uses the early-exit
    kernel; replica ``i`` follows ``derive_replica_seed(seed, i)``."""
    sets = [frozenset(as_point(p) for p in A) for A in chain]
    for small, big in zip(sets, sets[1:]):
        if not small <= big:
            raise ValueError("avoid sets must be nested")
    level = {}
    for j, A in enumerate(sets):
        for p in A:
            level.setdefault(p, j)
    pts = sorted(level)
    avoid = np.array(pts, dtype=np.int64).reshape(len(pts), params.d)
    lev = np.array([level[p] for p in pts], dtype=np.int64)
    with kernel_errstate():
        res = K.escape_batch(params.a, np.asarray(z, dtype=np.int64), cfg.horizon, cfg.R, cfg.r,
                             np.asarray(cfg.u, dtype=np.int64), avoid, lev, _seed_word(seed), int(n))
    return res[:, None] > np.arange(len(sets))[None, :]


@dataclass
class CapacityEstimate:
    points: dict            # point -> (estimate, stderr, n)
    total: float
    stderr_total: float
    n: int

    def to_json(self) -> dict:
        return {"total": self.total, "stderr_total": self.stderr_total, "n": self.n,
                "points": [{"z": list(z), "p": p, "stderr": se, "n": m}
                           for z, (p, se, m) in sorted(self.points.items())]}


def estimate_capacity(A: Iterable[Point], u: Sequence[int], r: int, R: int,
                      params: ModelParams, n: int, seed: int) -> CapacityEstimate:
    """Sum over ``z`` in ``A`` and ``Lambda+`` of the escape frequency from ``z``
    over ``n`` virgin walks (point ``z`` uses the seed ``point_key(seed, z)``)."""
    if n < 1:
        raise ValueError("n must be positive")
    cfg = EscapeConfig(u, r, R, frozenset(A))
    pts = sorted(p for p in cfg.A if p in cfg.box_plus)
    out = {}
    for z in pts:
        ok = escape_outcomes(params, z, cfg, [cfg.A], n, _point_master(seed, z))[:, 0]
        p = float(ok.mean())
        out[z] = (p, math.sqrt(p * (1 - p) / n), n)
    total = float(sum(v[0] for v in out.values()))
    se = math.sqrt(sum(v[1] ** 2 for v in out.values()))
    return CapacityEstimate(out, total, se, n)


@dataclass
class NowhereHeavyReport:
    ok: bool
    witness: Optional[Box] = None
    count: Optional[int] = None

    def __bool__(self) -> bool:
        return self.ok

    def to_json(self) -> dict:
        return {"ok": self.ok, "witness": self.witness.to_json() if self.witness else None,
                "count": self.count}


def nowhere_heavy(A: Iterable[Point], R: int, delta: float, kappa: float) -> NowhereHeavyReport:
    """Whether ``|A & (u + [-r,r]^d)| <= r^kappa`` for every ``u`` in
    ``[-2R,2R]^d`` and integer ``r`` in ``[R^delta, R]``."""
    pts = sorted(set(as_point(p) for p in A))
    if not pts:
        return NowhereHeavyReport(True)
    arr = np.array(pts, dtype=np.int64)
    m, r, c, u = K.first_heavy_block(arr, False, np.int64(min_block_radius(R, delta)),
                                     np.int64(R), np.int64(-2 * R), np.int64(2 * R),
                                     float(kappa), True)
    if m < 0:
        return NowhereHeavyReport(True)
    return NowhereHeavyReport(False, Box(as_point(u), int(r)), int(c))


class NotNowhereHeavy(ValueError):
    def __init__(self, report: NowhereHeavyReport):
        super().__init__(f"set is heavy in block {report.witness} ({report.count} points)")
        self.report = report


@dataclass
class CapVolRatio:
    ratio: float
    stderr: float
    capacity: CapacityEstimate
    volume: int
    denominator: float

    def to_json(self) -> dict:
        return {"ratio": self.ratio, "stderr": self.stderr, "volume": self.volume,
                "denominator": self.denominator, "capacity": self.capacity.to_json()}


def capvol_ratio(A: Iterable[Point], u: Sequence[int], r: int, R: int,
                 params: ModelParams, n: int, seed: int) -> CapVolRatio:
    """``Cap / (r^(-6 nu) |A & Lambda|^(1 - 2/d))`` with ``Lambda = u + [-r,r]^d``.
    Refuses sets that are not nowhere heavy."""
    A = set(as_point(p) for p in A)
    rep = nowhere_heavy(A, R, params.delta, params.kappa)
    if not rep:
        raise NotNowhereHeavy(rep)
    box = Box(u, r)
    vol = sum(1 for p in A if p in box)
    if vol == 0:
        raise ValueError("A does not meet the inner block")
    denom = r ** (-6 * params.nu) * vol ** (1 - 2 / params.d)
    cap = estimate_capacity(A, u, r, R, params, n, seed)
    return CapVolRatio(cap.total / denom, cap.stderr_total / denom, cap, vol, denom)


# ---------------------------------------------------------------- variance

@dataclass
class VarianceCurve:
    entries: dict            # t -> (v_hat, stderr, n)
    sigma_hat: float
    sigma_stderr: float
    coord: int = 0

    def to_json(self) -> dict:
        return {"coord": self.coord, "sigma_hat": self.sigma_hat, "sigma_stderr": self.sigma_stderr,
                "entries": [{"t": t, "v": v, "stderr": se, "n": m}
                            for t, (v, se, m) in sorted(self.entries.items())]}


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    x = np.asarray(x, dtype=np.float64)
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.shape[0]))


def variance_curve(params: ModelParams, t_grid: Sequence[int], n: int, seed: int,
                   coord: int = 0) -> VarianceCurve:
    """``v_t = E[W(t)_coord^2]`` for ``t`` in ``t_grid`` from ``n`` walks;
    ``sigma_hat = sqrt(v_T / T)`` at the largest positive ``T``."""
    if n < 2:
        raise ValueError("n must be at least 2")
    rec, snap, _, _, _ = _batch(params, max(t_grid), seed, n, t_grid)
    entries = {}
    for j, t in enumerate(rec.tolist()):
        x2 = snap[:, j, coord].astype(np.float64) ** 2
        v, se = _mean_se(x2)
        entries[t] = (v, se, n)
    T = max(t for t in entries if t > 0) if any(t > 0 for t in entries) else None
    if T is None:
        return VarianceCurve(entries, float("nan"), float("nan"), coord)
    vT, seT = entries[T][:2]
    sig = math.sqrt(vT / T)
    sig_se = seT / (2 * math.sqrt(vT * T)) if vT > 0 else float("nan")
    return VarianceCurve(entries, sig, sig_se, coord)


@dataclass
class Defect:
    value: float
    stderr: float
    s: int
    t: int
    n: int

    def to_json(self) -> dict:
        return {"defect": self.value, "stderr": self.stderr, "s": self.s, "t": self.t, "n": self.n,
                "defect_over_sqrt_t": self.value / math.sqrt(self.t) if self.t else None}


def additivity_defect(params: ModelParams, s: int, t: int, n: int, seed: int) -> Defect:
    """``|v_{s+t} - v_s - v_t|`` from one set of walks recorded at ``s``, ``t``,
    ``s+t``; the standard error uses the per-walk differences."""
    if s > t:
        raise ValueError("require s <= t")
    rec, snap, _, _, _ = _batch(params, s + t, seed, n, [s, t, s + t])
    col = {tt: j for j, tt in enumerate(rec.tolist())}
    x2 = snap[:, :, 0].astype(np.float64) ** 2
    D = x2[:, col[s + t]] - x2[:, col[s]] - x2[:, col[t]]
    mean, se = _mean_se(D)
    return Defect(abs(mean), se, s, t, n)


# ---------------------------------------------------------------- tails

@dataclass
class TailEstimate:
    p: float
    k: int
    n: int
    lo: float
    hi: float
    threshold: float
    t: int

    def to_json(self) -> dict:
        return {"p": self.p, "k": self.k, "n": self.n, "wilson_lo": self.lo,
                "wilson_hi": self.hi, "threshold": self.threshold, "t": self.t}


def displacement_tail(params: ModelParams, t: int, n: int, seed: int,
                      exponent: Optional[float] = None) -> TailEstimate:
    """Fraction of walks with ``max_{s<=t} ||W(s)||_2 >= t^exponent``
    (default exponent ``1/2 + 3 eps``)."""
    exponent = 0.5 + 3 * params.eps if exponent is None else exponent
    thr = float(t) ** exponent
    _, _, _, maxd2, _ = _batch(params, t, seed, n, [t])
    k = int((maxd2[:, 0] >= thr * thr).sum())
    lo, hi = wilson(k, n)
    return TailEstimate(k / n, k, n, lo, hi, thr, t)


@dataclass
class H1Report:
    T: int
    n: int
    counts: dict
    violations: list

    def frequency(self, v) -> float:
        return self.counts.get(as_point(v), 0) / self.n

    def to_json(self) -> dict:
        return {"T": self.T, "n": self.n, "support": len(self.counts),
                "violations": self.violations}


def h1_bound(v: Sequence[int], T: int, d: int, nu: float) -> float:
    norm = math.sqrt(sum(x * x for x in v))
    b = float(T) ** (-d / 2 + nu)
    return min(b, norm ** (-d + 2 * nu)) if norm > 0 else b


def h1_histogram(params: ModelParams, T: int, n: int, seed: int) -> H1Report:
    """Empirical ``P(W(T) = v)``; a site is flagged when the lower 3-sigma
    Wilson bound of its frequency exceeds ``min(T^(-d/2+nu), |v|^(-d+2nu))``."""
    _, snap, _, _, _ = _batch(params, T, seed, n, [T])
    pts, cnt = np.unique(snap[:, 0, :], axis=0, return_counts=True)
    counts = {tuple(int(c) for c in p): int(k) for p, k in zip(pts, cnt)}
    violations = []
    for v, k in sorted(counts.items()):
        lo, _ = wilson(k, n)
        b = h1_bound(v, T, params.d, params.nu)
        if lo > b:
            violations.append({"v": list(v), "freq": k / n, "wilson_lo": lo, "bound": b})
    return H1Report(T, n, counts, violations)


# ---------------------------------------------------------------- CLT diagnostics

@dataclass
class GaussianFit:
    t: int
    n: int
    ks: float
    pvalue: float
    sigma_hat: float
    sigma_stderr: float
    cov: np.ndarray

    def to_json(self) -> dict:
        return {"t": self.t, "n": self.n, "ks": self.ks, "pvalue": self.pvalue,
                "sigma_hat": self.sigma_hat, "sigma_stderr": self.sigma_stderr,
                "cov": self.cov.tolist()}


def gaussian_fit(params: ModelParams, t: int, n: int, seed: int) -> GaussianFit:
    """KS distance of ``W(t)_1 / (sigma_hat sqrt(t))`` from the standard normal
    plus the covariance of ``W(t) / sqrt(t)``."""
    _, snap, _, _, _ = _batch(params, t, seed, n, [t])
    X = snap[:, 0, :].astype(np.float64)
    x2 = X[:, 0] ** 2
    v, se = _mean_se(x2)
    sig = math.sqrt(v / t)
    sig_se = se / (2 * math.sqrt(v * t)) if v > 0 else float("nan")
    res = stats.kstest(X[:, 0] / (sig * math.sqrt(t)), "norm")
    cov = np.cov(X / math.sqrt(t), rowvar=False).reshape(params.d, params.d)
    return GaussianFit(t, n, float(res.statistic), float(res.pvalue), sig, sig_se, cov)


@dataclass
class PhaseFit:
    a: float
    t_grid: list
    mean_range: list
    mean_radius: list
    range_slope: float
    radius_slope: float
    range_residual: float
    radius_residual: float

    def to_json(self) -> dict:
        return dict(self.__dict__)


def _loglog_fit(t: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Least-squares slope of ``log y`` on ``log t`` and the RMS residual."""
    lt, ly = np.log(t), np.log(y)
    slope, icept = np.polyfit(lt, ly, 1)
    resid = ly - (slope * lt + icept)
    return float(slope), float(np.sqrt(np.mean(resid ** 2)))


def phase_scan(d: int, a_grid: Sequence[float], t_grid: Sequence[int], n: int,
               seed: int) -> list[PhaseFit]:
    """Log-log slopes of the mean range and mean max displacement against
    ``t`` for each reinforcement in ``a_grid``."""
    ts = sorted(set(int(t) for t in t_grid))
    if ts[0] < 1 or len(ts) < 2:
        raise ValueError("t_grid needs at least two positive times")
    out = []
    for a in a_grid:
        p = ModelParams(d, a)
        rec, _, rng, maxd2, _ = _batch(p, ts[-1], seed, n, ts)
        mr = rng.astype(np.float64).mean(axis=0)
        md = np.sqrt(maxd2.astype(np.float64)).mean(axis=0)
        t = rec.astype(np.float64)
        rs, rres = _loglog_fit(t, mr)
        ds, dres = _loglog_fit(t, md)
        out.append(PhaseFit(float(a), rec.tolist(), mr.tolist(), md.tolist(), rs, ds, rres, dres))
    return out


@dataclass
class ReturnEstimate:
    horizon: int
    n: int
    entries: dict   # t -> (p, lo, hi)

    def to_json(self) -> dict:
        return {"horizon": self.horizon, "n": self.n,
                "entries": [{"t": t, "p": p, "wilson_lo": lo, "wilson_hi": hi}
                            for t, (p, lo, hi) in sorted(self.entries.items())]}


def return_probability(params: ModelParams, t_grid: Sequence[int], horizon: int,
                       n: int, seed: int) -> ReturnEstimate:
    """``P(W(s) = W(0) for some s in [t, horizon])`` for each ``t``."""
    if any(t > horizon or t < 0 for t in t_grid):
        raise ValueError("t must lie in [0, horizon]")
    _, _, _, _, last = _batch(params, horizon, seed, n, [])
    entries = {}
    for t in sorted(set(int(t) for t in t_grid)):
        k = int((last >= t).sum())
        lo, hi = wilson(k, n)
        entries[t] = (k / n, lo, hi)
    return ReturnEstimate(horizon, n, entries)


# ---------------------------------------------------------------- demon-side escape

@dataclass
class DemonEscapeRatio:
    time: Optional[int]
    z: Optional[Point]
    p_virgin: float
    p_demon: float
    n_virgin: int
    n_demon: int

    @property
    def ratio(self) -> float:
        if self.p_virgin == 0:
            return float("inf") if self.p_demon > 0 else float("nan")
        return self.p_demon / self.p_virgin

    def to_json(self) -> dict:
        return {"time": self.time, "z": list(self.z) if self.z else None,
                "p_virgin": self.p_virgin, "p_demon": self.p_demon,
                "n_virgin": self.n_virgin, "n_demon": self.n_demon,
                "ratio": None if math.isnan(self.ratio) else self.ratio}


def demon_escape_ratio(params: ModelParams, R: int, r: int, u: Sequence[int], strategy: str,
                       run_steps: int, n: int, seed: int,
                       strategy_params: Optional[dict] = None) -> DemonEscapeRatio:
    """Escape probabilities on both sides of the demon comparison.

    A demon walk in ``[-4R,4R]^d`` runs up to ``run_steps`` steps; at its first
    time ``t`` in ``Lambda+`` we set ``z = W(t)``, ``A = W[0,t]`` and measure
    (i) escape of a virgin walk from ``z`` and (ii) escape of the demon walk's
    continuation, i.e. ORRW from ``z`` on the demon's environment.
    """
    box = Box((0,) * params.d, 4 * R)
    strat = make_strategy(strategy, box, seed, strategy_params)
    run = run_demon_walk(strat, box, params, step_count_stop(run_steps), TimeStream(seed))
    cfg = EscapeConfig(u, r, R)
    hits = [i for i, p in enumerate(run.points) if p in cfg.box_plus]
    if not hits:
        return DemonEscapeRatio(None, None, float("nan"), float("nan"), 0, 0)
    t = hits[0]
    z = run.points[t]
    A = frozenset(run.points[: t + 1])
    cfg = cfg.with_A(A)
    pv = float(escape_outcomes(params, z, cfg, [A], n, _point_master(seed, z))[:, 0].mean())
    prefix = Trajectory(params, run.positions[: t + 1], box=box)
    env = prefix.env
    seeds = _prf.derive_replica_seeds(seed ^ 0x5A5A, np.arange(n))
    paths = np.stack([simulate(params, z, cfg.horizon, TimeStream(int(s)), env).positions
                      for s in seeds])
    pd = float(escape_indicators(paths, cfg).mean())
    return DemonEscapeRatio(t, z, pv, pd, n, n)

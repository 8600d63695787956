"""Command line experiment runner.

Every run writes ``results.ndjson`` (deterministic statistic records),
``summary.csv`` and ``manifest.json`` (config hash, version, timestamps, seed
rule, output checksums, wall times) into ``--out``.

Exit codes: 0 ok, 2 configuration error, 3 assertion gate failed, 4 budget guard.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import time
from datetime import datetime, timezone

EXIT_OK, EXIT_CONFIG, EXIT_GATE, EXIT_BUDGET = 0, 2, 3, 4

# fields that never influence results and stay out of the config hash
_RUNTIME_FIELDS = ("out", "threads", "config")

SEED_RULE = ("replica i of master seed m uses mix(mix(m ^ 0x5245504C49434153) + i * G), "
             "mix = splitmix64 finalizer, G = 0x9E3779B97F4A7C15, arithmetic mod 2^64; "
             "per-point escape runs use m_z = fold of z's coordinates into m")


class ConfigError(ValueError):
    pass


class GateFailure(Exception):
    pass


# ---------------------------------------------------------------- argument parsing

def _int_list(s):
    if isinstance(s, list):
        return [int(x) for x in s]
    return [int(float(x)) for x in str(s).split(",") if x.strip()]


def _float_list(s):
    if isinstance(s, list):
        return [float(x) for x in s]
    return [float(x) for x in str(s).split(",") if x.strip()]


def _json_arg(s):
    if isinstance(s, (list, dict)):
        return s
    try:
        return json.loads(s)
    except json.JSONDecodeError as exc:
        raise argparse.ArgumentTypeError(f"invalid JSON: {exc}") from exc


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("model and run")
    g.add_argument("--d", type=int, default=2, help="lattice dimension")
    g.add_argument("--a", type=float, default=0.0, help="reinforcement")
    g.add_argument("--kappa", type=float, default=None)
    g.add_argument("--nu", type=float, default=None)
    g.add_argument("--eps", type=float, default=None)
    g.add_argument("--delta", type=float, default=None)
    g.add_argument("--n", type=int, default=1000, help="number of replicas")
    g.add_argument("--seed", type=int, default=0, help="64-bit master seed")
    g.add_argument("--out", default="orrw-out", help="output directory")
    g.add_argument("--threads", type=int, default=None, help="thread budget (also ORRW_THREADS)")
    g.add_argument("--config", default=None, help="JSON file whose fields override the flags")
    g.add_argument("--assert", dest="gate", action="store_true",
                   help="exit with code 3 when the run's acceptance gate fails")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="orrw", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        return sub.add_parser(name, parents=[common], help=help_)

    p = add("simulate", "simulate one walk and write it in binary framing")
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--start", type=_int_list, default=None)
    p.add_argument("--source", choices=["time", "envelopes"], default="time")
    p.add_argument("--offset", type=int, default=0)
    p.add_argument("--json", dest="write_json", action="store_true", help="also write JSON")

    p = add("variance", "estimate v_t = E[W(t)_1^2] and sigma")
    p.add_argument("--t", type=_int_list, default=[1, 10, 100])
    p.add_argument("--coord", type=int, default=1, help="1-based coordinate")
    p.add_argument("--band-min-t", type=int, default=100,
                   help="smallest t checked against the [0.9, 1.1] band by --assert")

    p = add("capacity", "Monte Carlo capacity, compared with the exact value when feasible")
    p.add_argument("--preset", choices=["tiny-exact"], default=None)
    p.add_argument("--A", type=_json_arg, default=None, help="JSON list of points")
    p.add_argument("--u", type=_int_list, default=None)
    p.add_argument("--r", type=int, default=1)
    p.add_argument("--R", type=int, default=2)
    p.add_argument("--exact", action="store_true", help="also enumerate the exact value")

    p = add("relaxed", "relaxed times of one walk")
    p.add_argument("--steps", type=int, default=400)
    p.add_argument("--R", type=int, default=5)

    p = add("heavy", "tau_heavy and tau_spend per replica")
    p.add_argument("--steps", type=int, default=400)
    p.add_argument("--R", type=int, default=5)

    p = add("demon", "demon walks (or the restriction replay check)")
    p.add_argument("--strategy", default="uniform-edge",
                   help="uniform-edge, fixed-edge, nearest-to-exit, greedy-dense or restriction")
    p.add_argument("--strategy-params", type=_json_arg, default=None)
    p.add_argument("--R", type=int, default=3, help="inner scale; the box is [-4R,4R]^d")
    p.add_argument("--steps", type=int, default=200)

    p = add("concat", "coupling defect between a walk and its concatenation")
    p.add_argument("--t1", type=int, default=500)
    p.add_argument("--t2", type=int, default=500)

    p = add("tails", "probability of travelling far")
    p.add_argument("--t", type=int, default=1000)
    p.add_argument("--exponent", type=float, default=None)

    p = add("h1", "site frequencies of W(T) against min(T^(-d/2+nu), |v|^(-d+2nu))")
    p.add_argument("--T", type=int, default=6)

    p = add("clt", "Gaussian fit of W(t)_1 and the sigma band")
    p.add_argument("--t", type=int, default=10000)

    p = add("phase-scan", "log-log slopes of range and radius")
    p.add_argument("--a-grid", type=_float_list, default=[0.0])
    p.add_argument("--t", type=_int_list, default=[10, 100, 1000, 10000])

    p = add("return", "probability of returning to the start after time t")
    p.add_argument("--t", type=_int_list, default=[0, 10, 100])
    p.add_argument("--horizon", type=int, default=1000)
    p.add_argument("--green-radius", type=float, default=None)

    p = add("oracle", "exact computations")
    p.add_argument("--kind", choices=["enumerate", "moments", "escape", "green", "exit"],
                   default="enumerate")
    p.add_argument("--t", type=int, default=2)
    p.add_argument("--L", type=float, default=4.0)
    p.add_argument("--radius", type=float, default=10.0)
    p.add_argument("--A", type=_json_arg, default=None)
    p.add_argument("--u", type=_int_list, default=None)
    p.add_argument("--r", type=int, default=1)
    p.add_argument("--R", type=int, default=2)

    add("selftest", "fast consistency battery")
    return parser


def _apply_config(parser, args) -> None:
    if not args.config:
        return
    try:
        with open(args.config) as fh:
            obj = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    known = set(vars(args)) - {"config", "command"}
    for key, value in obj.items():
        k = key.replace("-", "_")
        if k == "assert":
            k = "gate"
        if k == "command":
            if value != args.command:
                raise ConfigError(f"config is for {value!r}, not {args.command!r}")
            continue
        if k not in known:
            raise ConfigError(f"unknown config field {key!r}")
        setattr(args, k, _coerce(k, value, getattr(args, k)))


def _coerce(key, value, current):
    if key in ("t", "start", "u") and isinstance(value, (list, str)):
        return _int_list(value)
    if key == "a_grid":
        return _float_list(value)
    if isinstance(current, bool):
        return bool(value)
    if isinstance(current, int) and not isinstance(value, bool) and isinstance(value, (int, float)):
        return int(value)
    if isinstance(current, float) and isinstance(value, (int, float)):
        return float(value)
    return value


def experiment_config(args) -> dict:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in _RUNTIME_FIELDS}
    return cfg


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_json_default)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()


def _json_default(o):
    import numpy as np
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (set, frozenset, tuple)):
        return list(o)
    if hasattr(o, "to_json"):
        return o.to_json()
    raise TypeError(f"not serialisable: {type(o)!r}")


def _clean(x):
    """Replace non-finite floats by None so records stay valid JSON."""
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    return x


# ---------------------------------------------------------------- run context

class Run:
    def __init__(self, args, cfg, chash):
        self.args = args
        self.cfg = cfg
        self.hash = chash
        self.records = []
        self.wall = []
        self.rows = []
        self.files = {}
        self.gate = None
        self.gate_notes = []
        self.t0 = time.perf_counter()

    def emit(self, kind, value, **extra):
        rec = {"op": self.args.command, "kind": kind, "config_hash": self.hash,
               "master_seed": self.args.seed, "n": self.args.n}
        rec.update(extra)
        rec["value"] = value
        self.records.append(json.loads(canonical_json(_clean(json.loads(
            json.dumps(rec, default=_json_default))))))
        self.wall.append(round(time.perf_counter() - self.t0, 6))

    def check(self, ok, note):
        ok = bool(ok)
        self.gate = ok if self.gate is None else (self.gate and ok)
        self.gate_notes.append({"check": note, "pass": ok})


def _params(args, **over):
    from .engine import ModelParams
    kw = dict(d=args.d, a=args.a)
    for k in ("kappa", "nu", "eps", "delta"):
        v = getattr(args, k)
        if v is not None:
            kw[k] = v
    kw.update(over)
    return ModelParams(**kw)


# ---------------------------------------------------------------- subcommands

def cmd_simulate(run: Run):
    from .diagnostics import range_and_radius
    from .engine import Envelopes, TimeStream, simulate
    a = run.args
    p = _params(a)
    start = a.start if a.start is not None else [0] * p.d
    src = Envelopes(a.seed) if a.source == "envelopes" else TimeStream(a.seed, a.offset)
    traj = simulate(p, start, a.steps, src)
    blob = traj.to_bytes()
    run.files["trajectory.bin"] = blob
    if a.write_json:
        run.files["trajectory.json"] = (traj.dumps() + "\n").encode()
    rng, rad = range_and_radius(traj, traj.length)
    run.emit("trajectory", {"start": list(traj.start), "end": list(traj.end), "steps": traj.length,
                            "range": rng, "max_displacement": rad,
                            "sha256": hashlib.sha256(blob).hexdigest()})
    run.rows.append({"steps": traj.length, "range": rng, "max_displacement": rad})


def cmd_variance(run: Run):
    from .estimators import variance_curve
    a = run.args
    p = _params(a)
    if not 1 <= a.coord <= p.d:
        raise ConfigError("coord must be in 1..d")
    curve = variance_curve(p, a.t, a.n, a.seed, coord=a.coord - 1)
    for t, (v, se, n) in sorted(curve.entries.items()):
        ratio = p.d * v / t if t > 0 else None
        run.emit("variance", {"t": t, "v_hat": v, "stderr": se, "d_v_over_t": ratio})
        run.rows.append({"t": t, "v_hat": v, "stderr": se, "n": n, "d_v_over_t": ratio})
        if t >= max(a.band_min_t, 1):
            lo, hi = p.d * (v - 3 * se) / t, p.d * (v + 3 * se) / t
            run.check(0.9 <= lo and hi <= 1.1, f"d*v_t/t in [0.9,1.1] at t={t}")
    run.emit("sigma", {"sigma_hat": curve.sigma_hat, "stderr": curve.sigma_stderr})


def _capacity_instance(a):
    if a.preset == "tiny-exact":
        a.d, a.a, a.r, a.R = 2, 1.0, 1, 2
        a.A, a.u = [[0, 0]], [0, 0]
        a.exact = True
    if a.u is None:
        a.u = [0] * a.d
    if a.A is None:
        a.A = [list(a.u)]


def cmd_capacity(run: Run):
    from .estimators import EscapeConfig, estimate_capacity
    from .oracles import exact_escape
    a = run.args
    p = _params(a)
    A = [tuple(int(c) for c in z) for z in a.A]
    if any(len(z) != p.d for z in A) or len(a.u) != p.d:
        raise ConfigError("points must have d coordinates")
    est = estimate_capacity(A, a.u, a.r, a.R, p, a.n, a.seed)
    cfg = EscapeConfig(a.u, a.r, a.R, frozenset(A))
    exact_total = 0.0
    for z, (ph, se, n) in sorted(est.points.items()):
        ex = exact_escape(z, cfg, p) if a.exact else None
        if ex is not None:
            exact_total += ex
        run.emit("escape", {"z": list(z), "p_hat": ph, "stderr": se, "exact": ex})
        run.rows.append({"z": " ".join(map(str, z)), "p_hat": ph, "stderr": se, "exact": ex,
                         "z_score": (ph - ex) / se if ex is not None and se > 0 else None})
    value = {"capacity": est.total, "stderr": est.stderr_total}
    if a.exact:
        value["exact"] = exact_total
        run.check(abs(est.total - exact_total) <= 3 * est.stderr_total + 1e-15,
                  "Monte Carlo capacity within 3 stderr of the exact value")
    run.emit("capacity", value)


def cmd_relaxed(run: Run):
    from .diagnostics import min_relaxed_radius, relaxed_times
    from .engine import TimeStream, simulate
    a = run.args
    p = _params(a)
    traj = simulate(p, [0] * p.d, a.steps, TimeStream(a.seed))
    rel = relaxed_times(traj, a.R)
    frac = len(rel.times) / (traj.length + 1)
    run.emit("relaxed", {"R": a.R, "r_min": min_relaxed_radius(p.a), "steps": traj.length,
                         "relaxed": len(rel.times), "fraction": frac})
    run.rows.append({"R": a.R, "steps": traj.length, "relaxed": len(rel.times), "fraction": frac})


def cmd_heavy(run: Run):
    from ._prf import derive_replica_seeds
    from .diagnostics import stopping_times
    from .engine import TimeStream, simulate
    a = run.args
    p = _params(a)
    for i, s in enumerate(derive_replica_seeds(a.seed, range(a.n)).tolist()):
        traj = simulate(p, [0] * p.d, a.steps, TimeStream(int(s)))
        rep = stopping_times(traj, a.R).to_json()
        run.emit("stopping_times", rep, replica=i)
        run.rows.append({"replica": i, "tau_heavy": rep["tau_heavy"], "tau_spend": rep["tau_spend"]})


def cmd_demon(run: Run):
    from ._prf import derive_replica_seeds
    from .demon import (dump_decision_log, make_strategy, restriction_demon_replay,
                        run_demon_walk, step_count_stop)
    from .diagnostics import classify_blocks, h2_event_holds, max_vertex_visits, min_block_radius
    from .engine import TimeStream
    from .lattice import Box
    a = run.args
    p = _params(a)
    seeds = derive_replica_seeds(a.seed, range(a.n)).tolist()
    if a.strategy == "restriction":
        box = Box([0] * p.d, a.R)
        bad = 0
        for i, s in enumerate(seeds):
            r, dm = restriction_demon_replay(int(s), box, a.steps, p)
            same = r.same_path(dm)
            bad += not same
            run.rows.append({"replica": i, "length": r.length, "equal": same})
        run.emit("restriction_replay", {"mismatches": bad, "runs": len(seeds), "box": box.to_json()})
        run.check(bad == 0, "restriction equals the demon walk for every seed")
        return
    box = Box([0] * p.d, 4 * a.R)
    r_blk = min_block_radius(a.R, p.delta)
    try:
        make_strategy(a.strategy, box, 0, a.strategy_params)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    for i, s in enumerate(seeds):
        strat = make_strategy(a.strategy, box, int(s), a.strategy_params)
        log = [] if i == 0 else None
        traj = run_demon_walk(strat, box, p, step_count_stop(a.steps), TimeStream(int(s)),
                              decision_log=log)
        mv = max_vertex_visits(traj, traj.length, Box([0] * p.d, 2 * a.R))
        blocks = classify_blocks(traj, a.R, r_blk)
        val = {"length": traj.length, "max_vertex_visits": mv, "visit_bound": r_blk ** (2 * p.d),
               "h2_event": h2_event_holds(traj, a.R), "blocks_A": len(blocks.A),
               "blocks_bad": len(blocks.B)}
        run.emit("demon_walk", val, replica=i)
        run.rows.append(dict(replica=i, **val))
        if log is not None:
            run.files["decisions.ndjson"] = dump_decision_log(log).encode()
            run.files["demon_trajectory.json"] = (traj.dumps() + "\n").encode()


def cmd_concat(run: Run):
    import numpy as np
    from ._prf import derive_replica_seeds
    from .engine import concat_defects
    a = run.args
    p = _params(a)
    seeds = [int(s) for s in derive_replica_seeds(a.seed, range(a.n))]
    dfs = concat_defects(p, a.t1, a.t2, seeds)
    vals, counts = np.unique(np.round(dfs, 9), return_counts=True)
    hist = [{"defect": float(v), "count": int(c)} for v, c in zip(vals, counts)]
    run.emit("concat_defect", {"t1": a.t1, "t2": a.t2, "median": float(np.median(dfs)),
                               "mean": float(dfs.mean()), "max": float(dfs.max()),
                               "histogram": hist})
    run.rows.extend(hist)


def cmd_tails(run: Run):
    from .estimators import displacement_tail
    a = run.args
    p = _params(a)
    for label, params in (("orrw", p), ("srw", _params(a, a=0.0))):
        est = displacement_tail(params, a.t, a.n, a.seed, a.exponent)
        run.emit("tail", dict(est.to_json(), walk=label))
        run.rows.append(dict(est.to_json(), walk=label))


def cmd_h1(run: Run):
    from .estimators import h1_bound, h1_histogram
    a = run.args
    p = _params(a)
    rep = h1_histogram(p, a.T, a.n, a.seed)
    run.emit("h1", rep.to_json())
    for v, k in sorted(rep.counts.items()):
        run.rows.append({"v": " ".join(map(str, v)), "freq": k / a.n,
                         "bound": h1_bound(v, a.T, p.d, p.nu)})
    run.check(not rep.violations, "no site frequency exceeds its local bound at 3 sigma")


def cmd_clt(run: Run):
    from .estimators import gaussian_fit
    a = run.args
    p = _params(a)
    fit = gaussian_fit(p, a.t, a.n, a.seed)
    lo, hi = 0.9 / math.sqrt(p.d), 1.1 / math.sqrt(p.d)
    run.emit("gaussian_fit", dict(fit.to_json(), band=[lo, hi]))
    run.rows.append({"t": a.t, "ks": fit.ks, "sigma_hat": fit.sigma_hat,
                     "sigma_stderr": fit.sigma_stderr, "band_lo": lo, "band_hi": hi})
    run.check(lo <= fit.sigma_hat - 3 * fit.sigma_stderr and fit.sigma_hat + 3 * fit.sigma_stderr <= hi,
              "sigma_hat within the band with a 3 stderr margin")
    run.check(fit.ks <= 0.03, "KS distance at most 0.03")


def cmd_phase_scan(run: Run):
    from .estimators import phase_scan
    a = run.args
    for fit in phase_scan(a.d, a.a_grid, a.t, a.n, a.seed):
        run.emit("phase_fit", fit.to_json())
        for t, mr, md in zip(fit.t_grid, fit.mean_range, fit.mean_radius):
            run.rows.append({"a": fit.a, "t": t, "mean_range": mr, "mean_radius": md})
        if fit.a == 0:
            run.check(abs(fit.radius_slope - 0.5) <= 0.05, "a=0 radius slope 0.5 +- 0.05")
            run.check(abs(fit.range_slope - 0.5) <= 0.05, "a=0 range slope 0.5 +- 0.05")


def cmd_return(run: Run):
    from .estimators import return_probability
    from .oracles import srw_green
    a = run.args
    p = _params(a)
    est = return_probability(p, a.t, a.horizon, a.n, a.seed)
    value = est.to_json()
    if a.green_radius is not None:
        g = srw_green(p.d, a.green_radius)
        value["srw_green_return"] = g.return_probability()
    run.emit("return", value)
    for t, (pr, lo, hi) in sorted(est.entries.items()):
        run.rows.append({"t": t, "p": pr, "wilson_lo": lo, "wilson_hi": hi})


def cmd_oracle(run: Run):
    from .estimators import EscapeConfig
    from .oracles import (enumerate_orrw, exact_escape, exact_exit_through_edge, exact_moments,
                          srw_green)
    a = run.args
    p = _params(a)
    instance = {"kind": a.kind, "d": p.d, "a": p.a}
    if a.kind == "enumerate":
        dist = enumerate_orrw(p, a.t)
        instance["t"] = a.t
        value = [{"v": list(v), "p": q} for v, q in sorted(dist.support.items())]
        extra = {"method": "depth-first path enumeration", "budget": (2 * p.d) ** a.t}
    elif a.kind == "moments":
        instance["t"] = a.t
        value = exact_moments(p, a.t)
        extra = {"method": "depth-first path enumeration", "budget": (2 * p.d) ** a.t}
    elif a.kind == "escape":
        u = a.u if a.u is not None else [0] * p.d
        A = frozenset(tuple(z) for z in (a.A if a.A is not None else [u]))
        cfg = EscapeConfig(u, a.r, a.R, A)
        instance.update({"u": list(u), "r": a.r, "R": a.R, "A": sorted(list(z) for z in A)})
        value = {str(list(z)): exact_escape(z, cfg, p) for z in sorted(A) if z in cfg.box_plus}
        extra = {"method": "pruned path enumeration", "budget": (2 * p.d) ** cfg.horizon}
    elif a.kind == "green":
        g = srw_green(p.d, a.radius)
        instance["radius"] = a.radius
        value = {"g0": g.g0, "return_probability": g.return_probability()}
        extra = {"method": "sparse solve on the ball, absorbing exterior", "residual": g.residual}
    else:
        r = exact_exit_through_edge(p.d, a.L)
        instance["L"] = a.L
        value = {"p": r.value, "p_L_d_minus_1": r.value * a.L ** (p.d - 1), "edge": r.edge.to_json()}
        extra = {"method": "absorbing chain solve", "residual": r.residual}
    run.emit("oracle", value, instance=instance, **extra)
    run.rows.append({"kind": a.kind, "value": json.dumps(value, sort_keys=True)})


def cmd_selftest(run: Run):
    import numpy as np
    from .demon import restriction_demon_replay
    from .engine import EdgeEnvironment, ModelParams, TimeStream, simulate, srw_trajectory, transition_probs
    from .estimators import EscapeConfig, estimate_capacity
    from .lattice import Box, Edge
    from .oracles import enumerate_orrw, enumerate_orrw_memo, exact_escape, exact_escape_memo

    probs = transition_probs(EdgeEnvironment([Edge((0, 0), (1, 0)), Edge((0, 0), (0, 1))]), 0.5, (0, 0))
    run.check(np.allclose(probs, [0.3, 0.2, 0.3, 0.2], atol=1e-15), "transition law example")
    p2 = ModelParams(2, 1.0)
    e1, e2 = enumerate_orrw(p2, 5).support, enumerate_orrw_memo(p2, 5)
    run.check(max(abs(e1[k] - e2.get(k, 0.0)) for k in e1) < 1e-12, "enumerators agree")
    ok = all(np.array_equal(simulate(ModelParams(3, 0.0), (0, 0, 0), 500, TimeStream(s)).positions,
                            srw_trajectory(3, (0, 0, 0), 500, s)) for s in range(20))
    run.check(ok, "a=0 walk equals simple random walk")
    ok = all(r.same_path(dm) for r, dm in
             (restriction_demon_replay(s, Box((0, 0), 3), 200, p2) for s in range(20)))
    run.check(ok, "restriction demon replay")
    cfg = EscapeConfig((0, 0), 1, 2, frozenset({(0, 0)}))
    ex = exact_escape((0, 0), cfg, p2)
    run.check(abs(ex - exact_escape_memo((0, 0), cfg, p2)) < 1e-12, "escape oracles agree")
    est = estimate_capacity([(0, 0)], (0, 0), 1, 2, p2, 4000, run.args.seed)
    run.check(abs(est.total - ex) <= 3 * est.stderr_total, "capacity estimate matches oracle")
    run.emit("selftest", {"checks": run.gate_notes})
    run.rows.extend(run.gate_notes)
    run.args.gate = True


COMMANDS = {
    "simulate": cmd_simulate, "variance": cmd_variance, "capacity": cmd_capacity,
    "relaxed": cmd_relaxed, "heavy": cmd_heavy, "demon": cmd_demon, "concat": cmd_concat,
    "tails": cmd_tails, "h1": cmd_h1, "clt": cmd_clt, "phase-scan": cmd_phase_scan,
    "return": cmd_return, "oracle": cmd_oracle, "selftest": cmd_selftest,
}


# ---------------------------------------------------------------- output

def _csv_bytes(rows) -> bytes:
    if not rows:
        return b""
    cols = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in cols})
    return buf.getvalue().encode()


def _write_outputs(run: Run, started: str, backend: str, threads: int) -> dict:
    from . import __version__
    out = run.args.out
    os.makedirs(out, exist_ok=True)
    files = dict(run.files)
    files["results.ndjson"] = "".join(canonical_json(r) + "\n" for r in run.records).encode()
    files["summary.csv"] = _csv_bytes([_clean(r) for r in run.rows])
    sums = {}
    for name, data in sorted(files.items()):
        with open(os.path.join(out, name), "wb") as fh:
            fh.write(data)
        sums[name] = hashlib.sha256(data).hexdigest()
    manifest = {
        "config": run.cfg, "config_hash": run.hash, "version": __version__,
        "started": started, "finished": datetime.now(timezone.utc).isoformat(),
        "wall_time": round(time.perf_counter() - run.t0, 6), "record_wall_times": run.wall,
        "seed_rule": SEED_RULE, "backend": backend, "threads": threads,
        "gate": run.gate, "gate_checks": run.gate_notes, "checksums": sums,
    }
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(_clean(manifest), fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    return manifest


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        _apply_config(parser, args)
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("threads must be positive")
            os.environ["ORRW_THREADS"] = str(args.threads)
        if args.n < 1:
            raise ConfigError("n must be positive")
        if args.command == "capacity":
            _capacity_instance(args)
        _params(args)
    except (ConfigError, ValueError, TypeError) as exc:
        print(f"orrw: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    from . import _backend
    from .oracles import BudgetExceeded
    threads = _backend.set_threads(args.threads)
    cfg = experiment_config(args)
    chash = config_hash(cfg)
    started = datetime.now(timezone.utc).isoformat()
    run = Run(args, cfg, chash)
    try:
        COMMANDS[args.command](run)
    except BudgetExceeded as exc:
        print(f"orrw: budget guard: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except ConfigError as exc:
        print(f"orrw: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _write_outputs(run, started, _backend.BACKEND, threads)
    for note in run.gate_notes:
        print(f"{'PASS' if note['pass'] else 'FAIL'}  {note['check']}")
    print(f"wrote {args.out}/results.ndjson ({len(run.records)} records), config {chash[:12]}")
    if args.gate and run.gate is False:
        return EXIT_GATE
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

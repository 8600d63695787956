"""Time the hot kernels under the numba and pure-numpy backends.

Each backend runs in its own interpreter (the backend is chosen at import
time from ORRW_BACKEND). Numba timings exclude compilation: every kernel is
called once on a tiny input first.

    python3 benchmarks/bench_backends.py [--scale 1.0] [--json out.json]
"""
import argparse
import json
import os
import subprocess
import sys

_WORKER = r"""
import json, sys, time
import numpy as np
from orrw import _backend
from orrw.engine import ModelParams, TimeStream, Envelopes, simulate
from orrw import estimators as E, diagnostics as D
from orrw.estimators import EscapeConfig

scale = float(sys.argv[1])
p = ModelParams(3, 0.5)
cfg = EscapeConfig((0, 0, 0), 1, 3, frozenset({(0, 0, 0), (1, 0, 0)}))
slow = ModelParams(2, 0.05, kappa=2.0)
traj = simulate(slow, (0, 0), max(10, int(3000 * scale)), TimeStream(1))
rng = np.random.default_rng(0)
sparse = {tuple(x) for x in rng.integers(-16, 17, size=(max(5, int(300 * scale)), 3)).tolist()}


def sized(k):
    return max(2, int(k * scale))


# each case receives a size; a size of 1 is the warm-up call
cases = {
    "walk_path (time stream)": lambda m: simulate(p, (0, 0, 0), m * sized(20000), TimeStream(1)),
    "walk_path (envelopes)": lambda m: simulate(p, (0, 0, 0), m * sized(20000), Envelopes(1)),
    "walk_batch": lambda m: E._batch(p, 500, 2, m * sized(400), [1, 500]),
    "escape_batch": lambda m: E.escape_outcomes(p, (0, 0, 0), cfg, [cfg.A], m * sized(4000), 3),
    "relaxed_flags": lambda m: D.relaxed_mask(traj.positions, np.arange(0, traj.length + 1, 1 if m > 1 else 100),
                                              8, slow.a, slow.kappa),
    "first_heavy_block": lambda m: E.nowhere_heavy(sparse if m > 1 else {(0, 0, 0)}, 8, 1e-5, 3.5),
}
out = {"backend": _backend.BACKEND}
for name, fn in cases.items():
    fn(1)
    t0 = time.perf_counter()
    fn(2)
    out[name] = time.perf_counter() - t0
print(json.dumps(out))
"""


def run(backend: str, scale: float) -> dict:
    env = dict(os.environ, ORRW_BACKEND=backend, ORRW_THREADS="1")
    res = subprocess.run([sys.executable, "-c", _WORKER, str(scale)], env=env, check=True,
                         capture_output=True, text=True)
    return json.loads(res.stdout)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scale", type=float, default=1.0, help="multiplies every workload size")
    ap.add_argument("--json", default=None, help="write the timings here")
    args = ap.parse_args(argv)
    fast, slow = run("numba", args.scale), run("numpy", args.scale)
    names = [k for k in fast if k != "backend"]
    width = max(map(len, names))
    print(f"{'kernel':<{width}}  {'numba s':>10}  {'numpy s':>10}  {'speedup':>8}")
    for k in names:
        print(f"{k:<{width}}  {fast[k]:10.4f}  {slow[k]:10.4f}  {slow[k] / fast[k]:8.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"scale": args.scale, "numba": fast, "numpy": slow}, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())

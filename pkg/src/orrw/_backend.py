"""Kernel backend selection.

Set ``ORRW_BACKEND=numpy`` to run every kernel as plain Python over numpy
arrays instead of numba-compiled code. ``ORRW_THREADS`` caps the number of
worker threads used by parallel kernels.
"""
from __future__ import annotations

import contextlib
import os

import numpy as np

BACKEND = os.environ.get("ORRW_BACKEND", "numba").strip().lower()
if BACKEND not in ("numba", "numpy"):
    raise ValueError(f"ORRW_BACKEND must be 'numba' or 'numpy', got {BACKEND!r}")

_threads_env = os.environ.get("ORRW_THREADS")
if _threads_env and "NUMBA_NUM_THREADS" not in os.environ:
    # must happen before numba is imported; oversubscription is allowed
    os.environ["NUMBA_NUM_THREADS"] = str(max(int(_threads_env), os.cpu_count() or 1))

USE_NUMBA = False
if BACKEND == "numba":
    try:
        import numba

        numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]
        USE_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        BACKEND = "numpy"


if USE_NUMBA:
    prange = numba.prange

    def jit(fn=None, *, parallel=False):
        def wrap(f):
            return numba.njit(cache=True, parallel=parallel)(f)

        return wrap(fn) if fn is not None else wrap

else:
    prange = range

    def jit(fn=None, *, parallel=False):
        def wrap(f):
            return f

        return wrap(fn) if fn is not None else wrap


def set_threads(n: int | None) -> int:
    """Apply a thread budget to parallel kernels and return the effective count."""
    if not USE_NUMBA:
        return 1
    limit = numba.config.NUMBA_NUM_THREADS
    if n is None:
        env = os.environ.get("ORRW_THREADS")
        n = int(env) if env else limit
    n = max(1, min(int(n), limit))
    numba.set_num_threads(n)
    return n


def kernel_errstate():
    """Context for calling kernels: uint64 wraparound is intended, not an error."""
    if USE_NUMBA:
        return contextlib.nullcontext()
    return np.errstate(over="ignore")


if USE_NUMBA and _threads_env:
    set_threads(int(_threads_env))

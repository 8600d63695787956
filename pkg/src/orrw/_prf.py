"""Counter-based keyed pseudo-random function.

Every uniform used by the package is a pure function of a key and a counter,
built from the splitmix64 finalizer (a bijection on 64-bit words):

* time stream      ``U_t       = unit(mix(K_time(seed)  + t * G))``
* envelopes        ``U_{v,n}   = unit(mix(h_v + n * G))`` where
  ``h_v`` folds the coordinates of ``v`` into ``K_env(seed)`` one at a time
* replica seeds    ``seed_i    = mix(K_rep(master) + i * G)``

with ``K_dom(seed) = mix(seed XOR dom)``, ``G = 0x9E3779B97F4A7C15`` and
``unit(x) = (x >> 11) * 2**-53``. All arithmetic is modulo ``2**64``.
Because ``mix`` is bijective and ``G`` is odd, replica seeds are injective in
the replica index for a fixed master seed.
"""
from __future__ import annotations

import numpy as np

from ._backend import jit, kernel_errstate

MASK64 = (1 << 64) - 1

_G = np.uint64(0x9E3779B97F4A7C15)
_C1 = np.uint64(0xBF58476D1CE4E5B9)
_C2 = np.uint64(0x94D049BB133111EB)
_S11 = np.uint64(11)
_S27 = np.uint64(27)
_S30 = np.uint64(30)
_S31 = np.uint64(31)
_INV53 = 1.0 / 9007199254740992.0
# coordinates are shifted by 2**40 so they map to uint64 without sign issues
_COORD_SHIFT = 1 << 40

DOMAIN_TIME = np.uint64(0x54494D4553545245)     # "TIMESTRE"
DOMAIN_ENV = np.uint64(0x454E56454C4F5045)      # "ENVELOPE"
DOMAIN_REPLICA = np.uint64(0x5245504C49434153)  # "REPLICAS"


@jit
def mix64(z):
    z = np.uint64(z)
    z = (z ^ (z >> _S30)) * _C1
    z = (z ^ (z >> _S27)) * _C2
    return z ^ (z >> _S31)


@jit
def domain_key(seed, domain):
    return mix64(np.uint64(seed) ^ np.uint64(domain))


@jit
def to_unit(x):
    return np.float64(x >> _S11) * _INV53


@jit
def stream_at(key, t):
    """Uniform number ``t`` of the time stream with precomputed ``key``."""
    return to_unit(mix64(np.uint64(key) + np.uint64(t) * _G))


@jit
def envelope_at(key, v, n):
    """Uniform of the ``n``-th envelope at vertex ``v`` (1-based ``n``)."""
    h = np.uint64(key)
    for c in v:
        h = mix64(h + np.uint64(c + _COORD_SHIFT) * _G)
    return to_unit(mix64(h + np.uint64(n) * _G))


@jit
def replica_seed(master, index):
    return mix64(domain_key(master, DOMAIN_REPLICA) + np.uint64(index) * _G)


@jit
def point_key(seed, v):
    """Hash of a seed and a lattice point, used to split seeds per start point."""
    h = np.uint64(seed)
    for c in v:
        h = mix64(h + np.uint64(c + _COORD_SHIFT) * _G)
    return h


def as_seed(seed) -> np.uint64:
    """Coerce any integer (negative values wrap) to a 64-bit seed word."""
    return np.uint64(int(seed) & MASK64)


def derive_replica_seed(master_seed: int, replica_index: int) -> int:
    """Seed of replica ``replica_index`` under ``master_seed`` (see module doc)."""
    if replica_index < 0:
        raise ValueError("replica_index must be nonnegative")
    with kernel_errstate():
        return int(replica_seed(as_seed(master_seed), np.uint64(replica_index)))


# -- vectorised numpy versions, independent of the scalar kernels above --

def _mix64_vec(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _S30)) * _C1
    z = (z ^ (z >> _S27)) * _C2
    return z ^ (z >> _S31)


def derive_replica_seeds(master_seed: int, indices) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.uint64)
    key = _mix64_vec(np.array([as_seed(master_seed) ^ DOMAIN_REPLICA], dtype=np.uint64))[0]
    return _mix64_vec(key + idx * _G)


def stream_uniforms(seed: int, start: int, count: int) -> np.ndarray:
    """``U_start, ..., U_{start+count-1}`` of the time stream as a float array."""
    key = _mix64_vec(np.array([as_seed(seed) ^ DOMAIN_TIME], dtype=np.uint64))[0]
    t = np.arange(start, start + count, dtype=np.uint64)
    x = _mix64_vec(key + t * _G)
    return (x >> _S11).astype(np.float64) * _INV53

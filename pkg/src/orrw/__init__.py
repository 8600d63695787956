"""Once-reinforced random walk on Z^d: simulation, exact oracles and Monte
Carlo estimators.

Submodules are imported lazily so that thread settings (``ORRW_THREADS``) can
be applied before the compiled kernels load.
"""
from __future__ import annotations

import importlib

__version__ = "0.1.0"

_SUBMODULES = ("lattice", "engine", "diagnostics", "demon", "estimators", "oracles", "cli")


def __getattr__(name):
    if name in _SUBMODULES:
        return importlib.import_module(f"{__name__}.{name}")
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


__all__ = list(_SUBMODULES) + ["__version__"]

"""Selects the simulation kernel at import.

The compiled ``_kernel`` extension is preferred; ``IDTSIM_PURE_PYTHON=1`` forces
the pure-Python implementation (used by the cross-backend tests and the
benchmark).
"""
import importlib
import os

_NAMES = {"cython": "idtsim._kernel", "python": "idtsim._kernel_py"}


def load(name):
    """Import a specific backend by name ("cython" or "python")."""
    return importlib.import_module(_NAMES[name])


def available():
    out = []
    for name in _NAMES:
        try:
            load(name)
        except ImportError:
            continue
        out.append(name)
    return out


if os.environ.get("IDTSIM_PURE_PYTHON"):
    kernel = load("python")
else:
    try:
        kernel = load("cython")
    except ImportError:
        kernel = load("python")

BACKEND = kernel.BACKEND

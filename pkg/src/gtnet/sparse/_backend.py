"""Kernel selection: compiled extension if importable, numpy otherwise."""

from __future__ import annotations

import os

from . import _pykernels

FORCE_PURE = os.environ.get("GTNET_PURE_PYTHON", "") not in ("", "0")

try:
    if FORCE_PURE:
        raise ImportError("GTNET_PURE_PYTHON set")
    from . import _ckernels as kernels
    BACKEND = "cython"
except ImportError:
    kernels = _pykernels
    BACKEND = "numpy"


def available_backends() -> dict:
    """Name -> kernel module for every backend importable in this process."""
    found = {"numpy": _pykernels}
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        found["cython"] = _ckernels
    return found


def use_backend(name: str) -> None:
    """Switch the active kernels (used by tests and the benchmark)."""
    global kernels, BACKEND
    backends = available_backends()
    if name not in backends:
        raise ValueError(f"backend {name!r} not available; have {sorted(backends)}")
    kernels = backends[name]
    BACKEND = name
